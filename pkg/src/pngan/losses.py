"""Training objectives: denoised L1 alignment, perceptual, relativistic adversarial, total."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generator import conv2d_reflect

__all__ = [
    "EPS",
    "LossWeights",
    "FeatureExtractor",
    "l1_alignment",
    "perceptual_loss",
    "adversarial_losses",
    "total_objective",
]

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_p: float = 6e-3
    lambda_ra: float = 8e-4
    use_dd: bool = True
    use_pixel_d: bool = True
    use_lp: bool = True

    def __post_init__(self):
        for name in ("lambda_p", "lambda_ra"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def to_dict(self):
        return asdict(self)


class FeatureExtractor(nn.Module):
    """Frozen image -> feature map used by the perceptual loss.

    ``kind="fixed-random-conv"`` builds three stride-2 3x3 convs
    (3 -> 16 -> 32 -> 64, ReLU between) from a fixed seed.
    ``kind="pretrained-import"`` takes externally supplied ``(weight, bias)``
    pairs applied the same way, e.g. the first layers of a VGG16 whose last
    map is the chosen "feature map". ``kind="identity"`` returns its input.
    """

    def __init__(self, kind: str = "fixed-random-conv", seed: int = 1234,
                 widths=(16, 32, 64), layers=None, stride: int = 2):
        super().__init__()
        self.kind = kind
        self.stride = stride
        if kind == "identity":
            layers = []
        elif kind == "fixed-random-conv":
            gen = torch.Generator().manual_seed(seed)
            layers, cin = [], 3
            for cout in widths:
                bound = math.sqrt(6.0 / (cin * 9))
                w = torch.rand((cout, cin, 3, 3), generator=gen, dtype=torch.float64) * 2 * bound - bound
                layers.append((w, torch.zeros(cout, dtype=torch.float64)))
                cin = cout
        elif kind == "pretrained-import":
            if not layers:
                raise ValueError("pretrained-import needs a list of (weight, bias) layers")
        else:
            raise ValueError(f"unknown feature extractor kind {kind!r}")
        for i, (w, b) in enumerate(layers):
            self.register_buffer(f"w{i}", torch.as_tensor(w).clone())
            self.register_buffer(f"b{i}", torch.as_tensor(b).clone())
        self.n_layers = len(layers)

    def forward(self, x):
        for i in range(self.n_layers):
            w, b = getattr(self, f"w{i}"), getattr(self, f"b{i}")
            x = conv2d_reflect(x, w.to(x.dtype), b.to(x.dtype), self.stride)
            if i < self.n_layers - 1:
                x = F.relu(x)
        return x


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _denoised(i_fn, i_rn, dd):
    if dd is None:
        return i_fn, i_rn
    # the real branch carries no generator gradient
    with torch.no_grad():
        rd = dd(i_rn)
    return dd(i_fn), rd


def l1_alignment(i_fn: torch.Tensor, i_rn: torch.Tensor, dd=None) -> torch.Tensor:
    """Per-image sum of ``|D_d(I_fn) - D_d(I_rn)|`` over pixels and channels, batch mean.

    ``dd=None`` compares the images directly (the no-denoiser ablation).
    """
    _check_pair(i_fn, i_rn)
    fd, rd = _denoised(i_fn, i_rn, dd)
    return (fd - rd).abs().flatten(1).sum(dim=1).mean()


def perceptual_loss(i_fn: torch.Tensor, i_rn: torch.Tensor, dd, fx: FeatureExtractor) -> torch.Tensor:
    """Per-image squared L2 distance between features of the denoised images, batch mean."""
    _check_pair(i_fn, i_rn)
    fd, rd = _denoised(i_fn, i_rn, dd)
    with torch.no_grad():
        target = fx(rd)
    return (fx(fd) - target).pow(2).flatten(1).sum(dim=1).mean()


def adversarial_losses(d_ra_real: torch.Tensor, d_ra_fake: torch.Tensor):
    """Symmetric relativistic losses ``(L_D, L_G)``; probabilities clamped to ``[EPS, 1-EPS]``."""
    real = d_ra_real.clamp(EPS, 1 - EPS)
    fake = d_ra_fake.clamp(EPS, 1 - EPS)
    # mean over the batch per position, then over positions == overall mean
    real_term_d = torch.log(real).mean(dim=0)
    fake_term_d = torch.log(1 - fake).mean(dim=0)
    real_term_g = torch.log(1 - real).mean(dim=0)
    fake_term_g = torch.log(fake).mean(dim=0)
    l_d = -(real_term_d + fake_term_d).mean()
    l_g = -(real_term_g + fake_term_g).mean()
    return l_d, l_g


def total_objective(parts: dict, weights: LossWeights):
    """``L1 + lambda_p * L_p + lambda_ra * (L_D + L_G)`` with disabled terms dropped.

    ``parts`` maps ``l1``, ``lp``, ``ld``, ``lg`` to scalars (missing -> 0).
    """
    l1 = parts.get("l1", 0.0)
    total = l1
    if weights.use_lp:
        total = total + weights.lambda_p * parts.get("lp", 0.0)
    if weights.use_pixel_d:
        total = total + weights.lambda_ra * (parts.get("ld", 0.0) + parts.get("lg", 0.0))
    return total
