"""Residual CNN denoiser used as the frozen image-domain aligner, and its training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .generator import conv2d_reflect

__all__ = [
    "DenoiserConfig",
    "FrozenModuleError",
    "ResidualDenoiser",
    "denoise",
    "train_denoiser",
    "save_denoiser",
    "load_denoiser",
]

log = logging.getLogger(__name__)


class FrozenModuleError(RuntimeError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    depth: int = 8
    width: int = 64

    def __post_init__(self):
        if self.depth < 2 or self.width < 1:
            raise ValueError(f"depth must be >= 2 and width >= 1, got {self}")

    def to_dict(self):
        return asdict(self)


class ResidualDenoiser(nn.Module):
    """``clip(noisy - residual_net(noisy))`` with a plain ReLU conv stack.

    The last layer starts at zero so a fresh denoiser is the identity map.
    """

    def __init__(self, config: DenoiserConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = config or DenoiserConfig()
        widths = [3] + [cfg.width] * (cfg.depth - 1) + [3]
        self.convs = nn.ModuleList(nn.Conv2d(a, b, 3) for a, b in zip(widths[:-1], widths[1:]))
        self.frozen = False
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for i, conv in enumerate(self.convs):
                conv.bias.zero_()
                if i == len(self.convs) - 1:
                    conv.weight.zero_()
                else:
                    # He-uniform for ReLU stacks
                    bound = math.sqrt(6.0 / conv.weight[0].numel())
                    conv.weight.copy_(torch.rand(conv.weight.shape, generator=gen) * 2 * bound - bound)

    def freeze(self):
        self.frozen = True
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    def unfreeze(self):
        self.frozen = False
        for p in self.parameters():
            p.requires_grad_(True)
        return self

    def residual(self, x):
        for i, conv in enumerate(self.convs):
            x = conv2d_reflect(x, conv.weight, conv.bias)
            if i < len(self.convs) - 1:
                x = F.relu(x)
        return x

    def forward(self, noisy):
        return torch.clamp(noisy - self.residual(noisy), 0.0, 1.0)


def denoise(noisy, params: ResidualDenoiser):
    """Denoise an ``(H, W, 3)`` numpy image or an NCHW tensor."""
    if isinstance(noisy, np.ndarray):
        from .imaging import to_image, to_tensor

        dtype = next(params.parameters()).dtype
        with torch.no_grad():
            return to_image(params(to_tensor(noisy, dtype))[0])
    return params(noisy)


def train_denoiser(dataset, schedule, params: ResidualDenoiser | None = None,
                   config: DenoiserConfig | None = None, log_to=None) -> ResidualDenoiser:
    """Fit a denoiser by mean absolute error; returns it frozen.

    ``schedule`` is a :class:`pngan.training.DenoiserSchedule`. When
    ``params`` is given, training continues from it (a copy is made).
    """
    from .training import fit_denoiser

    if len(dataset) == 0:
        raise ValueError("cannot train a denoiser on an empty dataset")
    return fit_denoiser(dataset, schedule, params=params, config=config, log_to=log_to)


def save_denoiser(path, net: ResidualDenoiser, meta: dict | None = None):
    from .checkpoint import module_arrays, save_checkpoint

    return save_checkpoint(path, module_arrays(net, "denoiser"),
                           {"kind": "denoiser", "config": net.config.to_dict(), **(meta or {})})


def load_denoiser(path, frozen: bool = True) -> ResidualDenoiser:
    from .checkpoint import load_checkpoint, load_module_arrays

    arrays, meta = load_checkpoint(path)
    net = ResidualDenoiser(DenoiserConfig(**meta["config"]))
    dtype = arrays["denoiser/convs.0.weight"].dtype
    net = net.to(torch.float64 if dtype == np.float64 else torch.float32)
    load_module_arrays(net, arrays, "denoiser")
    return net.freeze() if frozen else net
