"""SMNet: the multi-scale attention generator.

Layout (NCHW tensors throughout)::

    I_fn = I_syn + f2(SRG_t(... SRG_1(f1(I_syn)) ...))
    SRG(x) = x + exit(MAB_n(... MAB_1(entry(x)) ...))
    MAB(x) = x + fuse([FCA(x), up2(FCA(down2(x))), up4(FCA(down4(x)))])

Spatial convs are 3x3 with reflect padding, the two post-upsample convs of
each MAB are 1x1. There are no normalization layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "GeneratorConfig",
    "SMNet",
    "SRG",
    "MAB",
    "FCA",
    "fca_forward",
    "blur_pool_down",
    "bilinear_down",
    "upsample_bilinear",
    "conv2d_reflect",
    "smnet_forward",
    "count_parameters",
    "closed_form_parameter_count",
    "REPORTED_PARAMETER_COUNT",
    "generate_dataset",
]

# published size of the default configuration; see README for the gap
REPORTED_PARAMETER_COUNT = 800_000

_BINOMIAL = (0.25, 0.5, 0.25)


@dataclass(frozen=True)
class GeneratorConfig:
    t: int = 3
    n: int = 2
    channels: int = 64
    fca_kernel: int = 3
    # ablation switches
    multi_scale: bool = True
    shift_invariant: bool = True
    use_fca: bool = True

    def __post_init__(self):
        if self.t < 1 or self.n < 1 or self.channels < 1:
            raise ValueError(f"t, n, channels must be >= 1, got {self}")
        if self.fca_kernel < 1 or self.fca_kernel % 2 == 0:
            raise ValueError(f"fca_kernel must be a positive odd integer, got {self.fca_kernel}")
        if self.use_fca and self.fca_kernel > self.channels:
            raise ValueError(
                f"fca_kernel={self.fca_kernel} is longer than the channel count {self.channels}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def conv2d_reflect(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None,
                   stride: int = 1) -> torch.Tensor:
    """``conv2d`` with reflect padding of ``k // 2`` on each side."""
    k = weight.shape[-1]
    if k > 1:
        p = k // 2
        x = F.pad(x, (p, p, p, p), mode="reflect")
    return F.conv2d(x, weight, bias, stride=stride)


class ReflectConv2d(nn.Conv2d):
    def __init__(self, cin: int, cout: int, kernel_size: int = 3, stride: int = 1):
        super().__init__(cin, cout, kernel_size, stride=stride, padding=0, bias=True)

    def forward(self, x):
        return conv2d_reflect(x, self.weight, self.bias, self.stride[0])


def fca_forward(x: torch.Tensor, kernel: torch.Tensor, bias: torch.Tensor | float) -> torch.Tensor:
    """Fast channel attention on an ``(N, C, H, W)`` feature map.

    The gate ``1 + sigmoid(conv1d(GAP(x)))`` is computed per channel, with the
    1-D convolution sliding along the channel axis (zero padded, no wrap),
    and broadcast over space. It lies strictly inside (1, 2).
    """
    kernel = torch.as_tensor(kernel, dtype=x.dtype).reshape(-1)
    k = kernel.numel()
    c = x.shape[1]
    if k > c:
        raise ValueError(f"FCA kernel of length {k} is longer than the channel count {c}")
    bias = torch.as_tensor(bias, dtype=x.dtype).reshape(1)
    pooled = x.mean(dim=(2, 3)).unsqueeze(1)  # (N, 1, C)
    # conv1d is a cross-correlation, matching the explicit-sum definition
    logits = F.conv1d(pooled, kernel.view(1, 1, k), bias, padding=k // 2)
    gate = 1.0 + torch.sigmoid(logits.squeeze(1))
    return x * gate[:, :, None, None]


class FCA(nn.Module):
    def __init__(self, kernel_size: int = 3):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(kernel_size))
        self.bias = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        return fca_forward(x, self.weight, self.bias)


def _binomial_filter(channels: int, like: torch.Tensor) -> torch.Tensor:
    taps = torch.tensor(_BINOMIAL, dtype=like.dtype, device=like.device)
    filt = taps[:, None] * taps[None, :]
    return filt.expand(channels, 1, 3, 3)


def blur_pool_down(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Shift-invariant downsampling by 2 or 4.

    Each factor-2 stage blurs with the normalized ``[1, 2, 1] / 4`` outer
    product (reflect padding), then keeps every second row and column.
    """
    if factor not in (2, 4):
        raise ValueError(f"factor must be 2 or 4, got {factor}")
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"spatial dims {h}x{w} not divisible by {factor}")
    for _ in range(factor // 2):
        c = x.shape[1]
        padded = F.pad(x, (1, 1, 1, 1), mode="reflect")
        x = F.conv2d(padded, _binomial_filter(c, x), stride=2, groups=c)
    return x


def bilinear_down(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Plain bilinear downsampling, the ablation stand-in for ``blur_pool_down``."""
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"spatial dims {h}x{w} not divisible by {factor}")
    return F.interpolate(x, scale_factor=1.0 / factor, mode="bilinear", align_corners=False)


def upsample_bilinear(x: torch.Tensor, factor: int) -> torch.Tensor:
    # align_corners=False: output pixel i samples input coordinate
    # (i + 0.5) / factor - 0.5, clamped to [0, size - 1], linear in each axis
    return F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)


class MAB(nn.Module):
    """Multi-scale attention block."""

    def __init__(self, channels: int, fca_kernel: int = 3, multi_scale: bool = True,
                 shift_invariant: bool = True, use_fca: bool = True):
        super().__init__()
        self.multi_scale = multi_scale
        self.shift_invariant = shift_invariant
        self.use_fca = use_fca
        nb = 3 if multi_scale else 1
        if use_fca:
            self.fca = nn.ModuleList(FCA(fca_kernel) for _ in range(nb))
        if multi_scale:
            self.up2 = ReflectConv2d(channels, channels, 1)
            self.up4 = ReflectConv2d(channels, channels, 1)
        self.fuse = ReflectConv2d(nb * channels, channels, 3)

    def _attend(self, i: int, x):
        return self.fca[i](x) if self.use_fca else x

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ValueError(f"MAB input dims {h}x{w} must be divisible by 4")
        branches = [self._attend(0, x)]
        if self.multi_scale:
            down = blur_pool_down if self.shift_invariant else bilinear_down
            b2 = self.up2(upsample_bilinear(self._attend(1, down(x, 2)), 2))
            b4 = self.up4(upsample_bilinear(self._attend(2, down(x, 4)), 4))
            branches += [b2, b4]
        return x + self.fuse(torch.cat(branches, dim=1))


class SRG(nn.Module):
    """Simple residual group: conv, ``n`` MABs, conv, plus identity."""

    def __init__(self, channels: int, n: int, **mab_kwargs):
        super().__init__()
        self.entry = ReflectConv2d(channels, channels, 3)
        self.blocks = nn.Sequential(*(MAB(channels, **mab_kwargs) for _ in range(n)))
        self.exit = ReflectConv2d(channels, channels, 3)

    def forward(self, x):
        return x + self.exit(self.blocks(self.entry(x)))


class SMNet(nn.Module):
    def __init__(self, config: GeneratorConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = config or GeneratorConfig()
        c = cfg.channels
        self.head = ReflectConv2d(3, c, 3)
        self.groups = nn.Sequential(*(
            SRG(c, cfg.n, fca_kernel=cfg.fca_kernel, multi_scale=cfg.multi_scale,
                shift_invariant=cfg.shift_invariant, use_fca=cfg.use_fca)
            for _ in range(cfg.t)))
        self.tail = ReflectConv2d(c, 3, 3)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0):
        """Fan-in uniform spatial kernels; zero FCA kernels and zero tail."""
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("tail.") or ".fca." in name:
                    p.zero_()
                elif p.ndim == 4:
                    bound = 1.0 / math.sqrt(p.shape[1] * p.shape[2] * p.shape[3])
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 * bound - bound)
                else:
                    p.zero_()

    def forward(self, i_syn):
        h, w = i_syn.shape[-2:]
        if i_syn.ndim != 4 or i_syn.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {tuple(i_syn.shape)}")
        if h % 4 or w % 4:
            raise ValueError(f"spatial dims {h}x{w} must be divisible by 4")
        return i_syn + self.tail(self.groups(self.head(i_syn)))


def smnet_forward(i_syn: torch.Tensor, params: SMNet) -> torch.Tensor:
    """Unclipped generator output for a batch (or a single ``(3, H, W)`` image)."""
    if i_syn.ndim == 3:
        return params(i_syn.unsqueeze(0)).squeeze(0)
    return params(i_syn)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def closed_form_parameter_count(t: int, n: int, channels: int, fca_kernel: int = 3,
                                kernel: int = 3, multi_scale: bool = True,
                                use_fca: bool = True) -> int:
    c, k2 = channels, kernel * kernel
    nb = 3 if multi_scale else 1
    head = 3 * c * k2 + c
    tail = c * 3 * k2 + 3
    mab = (nb * c) * c * k2 + c  # fusion
    if multi_scale:
        mab += 2 * (c * c + c)  # 1x1 upsample-path convs
    if use_fca:
        mab += nb * (fca_kernel + 1)
    srg = 2 * (c * c * k2 + c) + n * mab
    return head + tail + t * srg


def generate_dataset(clean_set, noise_cfg, params: SMNet, seed: int = 0, names=None):
    """Fake pairs ``(clean, clip(G(I_syn)))`` with ``I_syn`` drawn per image.

    The noise draw for image ``i`` is keyed by ``(seed, i)``.
    """
    from .imaging import PairedDataset, keyed_rng, to_image, to_tensor
    from .noise import synthesize

    clean_set = list(clean_set)
    dtype = next(params.parameters()).dtype
    pairs = []
    for i, clean in enumerate(clean_set):
        noise_seed = int(keyed_rng(seed, i).integers(0, 2**63 - 1))
        i_syn = synthesize(clean, noise_cfg, seed=noise_seed)
        with torch.no_grad():
            fake = smnet_forward(to_tensor(i_syn, dtype), params).clamp(0.0, 1.0)
        pairs.append((clean, to_image(fake[0])))
    meta = {"noise": noise_cfg.to_dict(), "seed": seed, "generator": params.config.to_dict()}
    return PairedDataset(tuple(pairs), "generated", tuple(names or ()), meta)
