"""Synthetic noise: AWGN, heteroscedastic Poisson-Gaussian, and a toy camera.

All samplers are pure functions of ``(clean, config)``; the config's seed
fully determines the draw.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np
from scipy.ndimage import uniform_filter

from .imaging import check_image

__all__ = [
    "AwgnConfig",
    "PoissonGaussConfig",
    "ToyCameraConfig",
    "add_awgn",
    "add_poisson_gauss",
    "simulate_real_noise",
    "synthesize",
    "noise_config_from_dict",
]


@dataclass(frozen=True)
class AwgnConfig:
    sigma_n: float = 50.0  # on the [0, 255] scale
    seed: int = 0
    kind: str = field(default="awgn", init=False)

    def __post_init__(self):
        if not self.sigma_n >= 0:
            raise ValueError(f"sigma_n must be >= 0, got {self.sigma_n}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PoissonGaussConfig:
    a: float = 0.01
    b: float = 0.02
    seed: int = 0
    kind: str = field(default="poisson_gauss", init=False)

    def __post_init__(self):
        if not (self.a >= 0 and self.b >= 0):
            raise ValueError(f"a and b must be >= 0, got a={self.a}, b={self.b}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ToyCameraConfig:
    a: float = 0.01
    b: float = 0.02
    correlation_radius: int = 1
    channel_mix: tuple = ((0.8, 0.1, 0.1), (0.2, 0.7, 0.1), (0.1, 0.2, 0.7))
    gamma: float = 2.2
    seed: int = 0
    kind: str = field(default="toy_camera", init=False)

    def __post_init__(self):
        if not (self.a >= 0 and self.b >= 0):
            raise ValueError(f"a and b must be >= 0, got a={self.a}, b={self.b}")
        if self.correlation_radius < 0:
            raise ValueError("correlation_radius must be >= 0")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        mix = np.asarray(self.channel_mix, dtype=np.float64)
        if mix.shape != (3, 3):
            raise ValueError(f"channel_mix must be 3x3, got shape {mix.shape}")
        if np.any(np.abs(mix.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError(f"channel_mix rows must sum to 1, got {mix.sum(axis=1)}")
        object.__setattr__(self, "channel_mix", tuple(tuple(float(v) for v in r) for r in mix))

    def to_dict(self):
        d = asdict(self)
        d["channel_mix"] = [list(r) for r in self.channel_mix]
        return d


def add_awgn(clean: np.ndarray, cfg: AwgnConfig) -> np.ndarray:
    """``clip(clean + N(0, (sigma_n / 255)^2))``."""
    clean = check_image(clean, "clean")
    rng = np.random.default_rng(cfg.seed)
    if cfg.sigma_n == 0:
        return clean.copy()
    eps = rng.standard_normal(clean.shape) * (cfg.sigma_n / 255.0)
    return np.clip(clean + eps, 0.0, 1.0)


def _heteroscedastic(x: np.ndarray, a: float, b: float, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(x.shape) * np.sqrt(a * x + b * b)


def add_poisson_gauss(clean: np.ndarray, cfg: PoissonGaussConfig) -> np.ndarray:
    """Gaussian approximation of Poisson-Gaussian noise: variance ``a * x + b^2``."""
    clean = check_image(clean, "clean")
    if cfg.a == 0:
        # identical draw to add_awgn with sigma_n = 255 * b
        return add_awgn(clean, AwgnConfig(sigma_n=255.0 * cfg.b, seed=cfg.seed))
    rng = np.random.default_rng(cfg.seed)
    return np.clip(clean + _heteroscedastic(clean, cfg.a, cfg.b, rng), 0.0, 1.0)


def simulate_real_noise(clean: np.ndarray, cfg: ToyCameraConfig) -> np.ndarray:
    """Toy spatio-chromatically correlated camera noise.

    Tone curve ``x ** (1 / gamma)``, heteroscedastic noise in the toned
    domain, box blur of the noise field, channel mixing of the noise field,
    clip, inverse tone curve.
    """
    clean = check_image(clean, "clean")
    mix = np.asarray(cfg.channel_mix)
    if cfg.correlation_radius == 0 and np.array_equal(mix, np.eye(3)) and cfg.gamma == 1:
        return add_poisson_gauss(clean, PoissonGaussConfig(cfg.a, cfg.b, cfg.seed))
    rng = np.random.default_rng(cfg.seed)
    toned = clean ** (1.0 / cfg.gamma)
    eps = _heteroscedastic(toned, cfg.a, cfg.b, rng)
    if cfg.correlation_radius > 0:
        size = 2 * cfg.correlation_radius + 1
        eps = uniform_filter(eps, size=(size, size, 1), mode="reflect")
    eps = eps @ mix.T
    return np.clip(toned + eps, 0.0, 1.0) ** cfg.gamma


def synthesize(clean: np.ndarray, cfg, seed: int | None = None) -> np.ndarray:
    """Dispatch on config type; ``seed`` overrides the config's own seed."""
    if seed is not None:
        d = cfg.to_dict()
        d.pop("kind")
        d["seed"] = seed
        cfg = type(cfg)(**d)
    if isinstance(cfg, AwgnConfig):
        return add_awgn(clean, cfg)
    if isinstance(cfg, PoissonGaussConfig):
        return add_poisson_gauss(clean, cfg)
    if isinstance(cfg, ToyCameraConfig):
        return simulate_real_noise(clean, cfg)
    raise TypeError(f"unknown noise config {type(cfg).__name__}")


def noise_config_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", "awgn")
    types = {"awgn": AwgnConfig, "poisson_gauss": PoissonGaussConfig, "toy_camera": ToyCameraConfig}
    if kind not in types:
        raise ValueError(f"unknown noise kind {kind!r}")
    if "channel_mix" in d:
        d["channel_mix"] = tuple(tuple(r) for r in d["channel_mix"])
    return types[kind](**d)
