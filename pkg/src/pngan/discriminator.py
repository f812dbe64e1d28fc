"""Pixel-level discriminator and the relativistic average pairing."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generator import conv2d_reflect

__all__ = [
    "DiscriminatorConfig",
    "PixelDiscriminator",
    "cd_forward",
    "relativistic_scores",
]


@dataclass(frozen=True)
class DiscriminatorConfig:
    width: int = 64
    slope: float = 0.2
    # ablation: strided image-level D with one score per image
    image_level: bool = False
    # False: per-pixel mean over the opposing batch; True: one scalar mean
    scalar_mean: bool = False

    def to_dict(self):
        return asdict(self)


class PixelDiscriminator(nn.Module):
    """Four 3x3 reflect-padded convs, LeakyReLU after the first three.

    Returns the raw score map ``C_D`` of shape ``(N, H, W)``; in image-level
    mode every conv has stride 2 and the map is averaged to ``(N, 1, 1)``.
    """

    def __init__(self, config: DiscriminatorConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = config or DiscriminatorConfig()
        w = cfg.width
        self.convs = nn.ModuleList(
            nn.Conv2d(cin, cout, 3, padding=0) for cin, cout in [(3, w), (w, w), (w, w), (w, 1)])
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in self.convs:
                fan_in = conv.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                conv.weight.copy_(torch.rand(conv.weight.shape, generator=gen) * 2 * bound - bound)
                conv.bias.zero_()

    def forward(self, image):
        stride = 2 if self.config.image_level else 1
        if self.config.image_level and min(image.shape[-2:]) < 16:
            raise ValueError(f"image-level D needs inputs of at least 16x16, got {tuple(image.shape[-2:])}")
        x = image
        for i, conv in enumerate(self.convs):
            x = conv2d_reflect(x, conv.weight, conv.bias, stride)
            if i < 3:
                x = F.leaky_relu(x, self.config.slope)
        x = x[:, 0]
        if self.config.image_level:
            x = x.mean(dim=(1, 2), keepdim=True)
        return x


def cd_forward(image: torch.Tensor, params: PixelDiscriminator) -> torch.Tensor:
    if image.ndim == 3:
        return params(image.unsqueeze(0))[0]
    return params(image)


def relativistic_scores(cd_real: torch.Tensor, cd_fake: torch.Tensor, scalar_mean: bool = False):
    """``(sigmoid(C_real - E[C_fake]), sigmoid(C_fake - E[C_real]))``.

    The expectation runs over the batch axis per pixel position, or over
    batch and pixels together when ``scalar_mean`` is set.
    """
    if cd_real.shape[1:] != cd_fake.shape[1:]:
        raise ValueError(f"score maps differ in shape: {tuple(cd_real.shape)} vs {tuple(cd_fake.shape)}")
    dims = tuple(range(cd_real.ndim)) if scalar_mean else (0,)
    mean_fake = cd_fake.mean(dim=dims, keepdim=True)
    mean_real = cd_real.mean(dim=dims, keepdim=True)
    return torch.sigmoid(cd_real - mean_fake), torch.sigmoid(cd_fake - mean_real)
