"""Alternating adversarial training, denoiser fitting and finetuning.

Randomness in the data pipeline is counter-based: the batch drawn at step
``k`` depends only on ``(seed, k)``, so resuming from a checkpoint replays
exactly the batches an uninterrupted run would have seen.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (load_checkpoint, load_module_arrays, load_optimizer_arrays,
                         module_arrays, optimizer_arrays, save_checkpoint)
from .denoiser import DenoiserConfig, FrozenModuleError, ResidualDenoiser
from .discriminator import DiscriminatorConfig, PixelDiscriminator, relativistic_scores
from .generator import GeneratorConfig, SMNet
from .imaging import PairedDataset, augment_flip, crop_offsets, keyed_rng, save_png, to_image, to_tensor
from .losses import (FeatureExtractor, LossWeights, adversarial_losses, l1_alignment,
                     perceptual_loss, total_objective)
from .noise import AwgnConfig, synthesize

__all__ = [
    "TrainConfig",
    "TrainState",
    "DenoiserSchedule",
    "FinetuneConfig",
    "NumericalAbort",
    "lr_at",
    "cosine_lr",
    "make_adam",
    "sample_batch",
    "gan_step",
    "train_gan",
    "save_gan_checkpoint",
    "load_gan_checkpoint",
    "fit_denoiser",
    "finetune_denoiser",
]

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class NumericalAbort(FloatingPointError):
    """A loss went non-finite; ``snapshot`` holds the offending batch."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 20_000
    batch: int = 8
    patch: int = 64
    lr_init: float = 2e-4
    lr_final: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    checkpoint_every: int = 0
    sample_every: int = 0
    flips: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr_final > self.lr_init:
            raise ValueError(f"lr_final {self.lr_final} exceeds lr_init {self.lr_init}")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0 < b < 1:
                raise ValueError(f"Adam betas must lie in (0, 1), got {b}")
        if self.total_steps < 0 or self.batch < 1:
            raise ValueError("total_steps must be >= 0 and batch >= 1")
        if self.patch % 4:
            raise ValueError(f"patch {self.patch} must be divisible by 4")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def torch_dtype(self):
        return _DTYPES[self.dtype]

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    step: int = 0
    seed: int = 0
    opt_g: torch.optim.Optimizer | None = None
    opt_d: torch.optim.Optimizer | None = None
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class DenoiserSchedule:
    steps: int = 5000
    batch: int = 8
    patch: int = 64
    lr_init: float = 2e-4
    lr_final: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0
    flips: bool = True

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class FinetuneConfig:
    steps: int = 1000
    batch: int = 8
    patch: int = 64
    # desk-scale default; the full-scale value is 1e-6
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def cosine_lr(step: int, total: int, lr_init: float, lr_final: float) -> float:
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if total == 0:
        return lr_init
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * step / total))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Cosine annealing from ``lr_init`` at step 0 to ``lr_final`` at ``total_steps``."""
    return cosine_lr(step, cfg.total_steps, cfg.lr_init, cfg.lr_final)


def make_adam(module: torch.nn.Module, lr: float, betas) -> torch.optim.Adam:
    if getattr(module, "frozen", False):
        raise FrozenModuleError(f"{type(module).__name__} is frozen and cannot be optimized")
    return torch.optim.Adam(module.parameters(), lr=lr, betas=tuple(betas))


def _set_lr(opt, lr):
    for group in opt.param_groups:
        group["lr"] = lr


def _derived_seed(*key) -> int:
    return int(keyed_rng(*key).integers(0, 2**63 - 1))


def sample_batch(dataset: PairedDataset, batch: int, patch: int, seed: int, step: int,
                 flips: bool = True):
    """Draw ``batch`` aligned (clean, noisy) patches for step ``step``.

    Pair indices are drawn with replacement.
    """
    rng = keyed_rng(seed, step)
    idx = rng.integers(0, len(dataset), size=batch)
    flip_bits = rng.integers(0, 2, size=(batch, 2)) if flips else np.zeros((batch, 2), int)
    out = []
    for b, i in enumerate(idx):
        clean, noisy = dataset[int(i)]
        h, w = clean.shape[:2]
        (y, x), = crop_offsets(h, w, patch, 1, seed, pair_index=step * batch + b)
        pair = (clean[y:y + patch, x:x + patch], noisy[y:y + patch, x:x + patch])
        out.append(augment_flip(pair, bool(flip_bits[b, 0]), bool(flip_bits[b, 1])))
    return out


def _gan_batch(dataset, noise_cfg, cfg: TrainConfig, step: int):
    pairs = sample_batch(dataset, cfg.batch, cfg.patch, cfg.seed, step, cfg.flips)
    syn = [synthesize(c, noise_cfg, seed=_derived_seed(cfg.seed, step, b, 7))
           for b, (c, _) in enumerate(pairs)]
    dt = cfg.torch_dtype
    return to_tensor(syn, dt), to_tensor([n for _, n in pairs], dt)


def _scalar(v) -> float:
    return float(torch.as_tensor(v).detach())


def _check_finite(parts: dict, step: int, i_syn, i_rn):
    bad = [k for k, v in parts.items() if not math.isfinite(_scalar(v))]
    if bad:
        raise NumericalAbort(
            f"non-finite loss {bad} at step {step}",
            {"step": step, "i_syn": i_syn.detach().cpu().numpy(), "i_rn": i_rn.detach().cpu().numpy(),
             "losses": {k: _scalar(v) for k, v in parts.items()}})


def gan_step(i_syn: torch.Tensor, i_rn: torch.Tensor, state: TrainState, generator: SMNet,
             discriminator: PixelDiscriminator, denoiser: ResidualDenoiser | None,
             fx: FeatureExtractor | None, cfg: TrainConfig) -> dict:
    """One alternating update: G with D fixed, then D with G fixed.

    Returns the loss record for the step (values measured before the
    updates) and advances ``state.step``.
    """
    if denoiser is not None and not denoiser.frozen:
        raise FrozenModuleError("the denoiser must be frozen during adversarial training")
    w = cfg.weights
    lr = lr_at(state.step, cfg)
    dd = denoiser if w.use_dd else None
    adversarial = w.use_pixel_d and w.lambda_ra > 0

    # (i) fix D, train G
    g_params = [p for p in generator.parameters()]
    i_fn = generator(i_syn)
    parts = {"l1": l1_alignment(i_fn, i_rn, dd)}
    parts["lp"] = (perceptual_loss(i_fn, i_rn, dd, fx) if w.use_lp and w.lambda_p > 0 and fx is not None
                   else i_fn.new_zeros(()))
    if adversarial:
        with torch.no_grad():
            cd_real = discriminator(i_rn)
        d_real, d_fake = relativistic_scores(cd_real, discriminator(i_fn),
                                             discriminator.config.scalar_mean)
        parts["ld"], parts["lg"] = adversarial_losses(d_real, d_fake)
    else:
        parts["ld"] = parts["lg"] = i_fn.new_zeros(())
    loss_g = parts["l1"]
    if w.use_lp:
        loss_g = loss_g + w.lambda_p * parts["lp"]
    if adversarial:
        loss_g = loss_g + w.lambda_ra * parts["lg"]
    _check_finite(parts, state.step, i_syn, i_rn)
    grads = torch.autograd.grad(loss_g, g_params)
    for p, g in zip(g_params, grads):
        p.grad = g
    _set_lr(state.opt_g, lr)
    state.opt_g.step()
    state.opt_g.zero_grad(set_to_none=True)

    # (ii) fix G, train D on fresh score maps
    if adversarial:
        fake = i_fn.detach()
        d_real, d_fake = relativistic_scores(discriminator(i_rn), discriminator(fake),
                                             discriminator.config.scalar_mean)
        l_d, _ = adversarial_losses(d_real, d_fake)
        if not math.isfinite(_scalar(l_d)):
            _check_finite({"ld": l_d}, state.step, i_syn, i_rn)
        d_params = list(discriminator.parameters())
        grads = torch.autograd.grad(w.lambda_ra * l_d, d_params)
        for p, g in zip(d_params, grads):
            p.grad = g
        _set_lr(state.opt_d, lr)
        state.opt_d.step()
        state.opt_d.zero_grad(set_to_none=True)

    record = {k: _scalar(v) for k, v in parts.items()}
    record["total"] = float(total_objective(record, w))
    record["step"] = state.step
    record["lr"] = lr
    state.step += 1
    state.history.append(record)
    return record


def save_gan_checkpoint(path, generator, discriminator, state: TrainState, cfg: TrainConfig,
                        extra_meta: dict | None = None):
    arrays = {}
    arrays.update(module_arrays(generator, "generator"))
    arrays.update(module_arrays(discriminator, "discriminator"))
    arrays.update(optimizer_arrays(state.opt_g, generator, "optim_g"))
    arrays.update(optimizer_arrays(state.opt_d, discriminator, "optim_d"))
    meta = {"kind": "gan", "step": state.step, "seed": state.seed, "config": _jsonable(cfg.to_dict()),
            **(extra_meta or {})}
    return save_checkpoint(path, arrays, meta)


def _jsonable(d):
    return json.loads(json.dumps(d, default=lambda o: asdict(o) if hasattr(o, "__dataclass_fields__") else str(o)))


def build_gan(cfg: TrainConfig):
    dt = cfg.torch_dtype
    g = SMNet(cfg.generator, seed=cfg.seed).to(dt)
    d = PixelDiscriminator(cfg.discriminator, seed=cfg.seed + 1).to(dt)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    state = TrainState(step=0, seed=cfg.seed, opt_g=make_adam(g, cfg.lr_init, betas),
                       opt_d=make_adam(d, cfg.lr_init, betas))
    return g, d, state


def load_gan_checkpoint(path, cfg: TrainConfig):
    arrays, meta = load_checkpoint(path)
    g, d, state = build_gan(cfg)
    load_module_arrays(g, arrays, "generator")
    load_module_arrays(d, arrays, "discriminator")
    load_optimizer_arrays(state.opt_g, g, arrays, "optim_g")
    load_optimizer_arrays(state.opt_d, d, arrays, "optim_d")
    state.step = int(meta["step"])
    state.seed = int(meta["seed"])
    return g, d, state


def train_gan(real: PairedDataset, noise_cfg, cfg: TrainConfig, denoiser: ResidualDenoiser,
              fx: FeatureExtractor | None = None, run_dir=None, resume_from=None,
              stop_at: int | None = None, log_every: int = 0):
    """Train generator and discriminator on ``real`` pairs.

    ``I_syn`` is synthesized from each real pair's clean image with
    ``noise_cfg``. Checkpoints go to ``<run_dir>/ckpt/step-<N>`` and losses
    to ``<run_dir>/log.jsonl``. ``stop_at`` ends early (still following the
    full-length schedule), which together with ``resume_from`` lets a run be
    split across processes.
    """
    if len(real) == 0:
        raise ValueError("cannot train on an empty dataset")
    if not denoiser.frozen:
        raise FrozenModuleError("train_gan needs a frozen denoiser")
    denoiser = denoiser.to(cfg.torch_dtype)
    if fx is None:
        fx = FeatureExtractor()
    fx = fx.to(cfg.torch_dtype)
    if resume_from is not None:
        g, d, state = load_gan_checkpoint(resume_from, cfg)
    else:
        g, d, state = build_gan(cfg)
    end = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
    logf = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        logf = open(run_dir / "log.jsonl", "a")
    try:
        while state.step < end:
            i_syn, i_rn = _gan_batch(real, noise_cfg, cfg, state.step)
            rec = gan_step(i_syn, i_rn, state, g, d, denoiser, fx, cfg)
            if logf:
                logf.write(json.dumps({k: rec[k] for k in ("step", "l1", "lp", "ld", "lg", "total")}) + "\n")
            if log_every and state.step % log_every == 0:
                log.info("gan step %d l1=%.4g lp=%.4g ld=%.4g lg=%.4g", rec["step"], rec["l1"],
                         rec["lp"], rec["ld"], rec["lg"])
            if run_dir is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_gan_checkpoint(run_dir / "ckpt" / f"step-{state.step}", g, d, state, cfg)
            if run_dir is not None and cfg.sample_every and state.step % cfg.sample_every == 0:
                with torch.no_grad():
                    sample = to_image(g(i_syn[:1]).clamp(0, 1))[0]
                save_png(run_dir / "samples" / f"step-{state.step}.png", sample)
    finally:
        if logf:
            logf.close()
    return g, d, state


def fit_denoiser(dataset: PairedDataset, schedule: DenoiserSchedule, params=None,
                 config: DenoiserConfig | None = None, log_to=None, lr_fixed: float | None = None,
                 dtype=torch.float32) -> ResidualDenoiser:
    """Mean-absolute-error training; returns a frozen copy with ``loss_curve`` attached."""
    if len(dataset) == 0:
        raise ValueError("cannot train a denoiser on an empty dataset")
    if params is None:
        net = ResidualDenoiser(config, seed=schedule.seed).to(dtype)
    else:
        net = copy.deepcopy(params).unfreeze()
        dtype = next(net.parameters()).dtype
    opt = make_adam(net, schedule.lr_init, (schedule.adam_beta1, schedule.adam_beta2))
    curve = []
    for step in range(schedule.steps):
        pairs = sample_batch(dataset, schedule.batch, schedule.patch, schedule.seed, step, schedule.flips)
        clean = to_tensor([c for c, _ in pairs], dtype)
        noisy = to_tensor([n for _, n in pairs], dtype)
        loss = (net(noisy) - clean).abs().mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        lr = lr_fixed if lr_fixed is not None else cosine_lr(step, schedule.steps, schedule.lr_init,
                                                             schedule.lr_final)
        _set_lr(opt, lr)
        opt.step()
        curve.append(float(loss.detach()))
        if log_to is not None:
            log_to.write(json.dumps({"step": step, "l1": curve[-1]}) + "\n")
    net.freeze()
    net.loss_curve = curve
    return net


def finetune_denoiser(base: ResidualDenoiser, mixed: PairedDataset, cfg: FinetuneConfig,
                      log_to=None) -> ResidualDenoiser:
    """Continue training ``base`` on ``mixed`` at the constant finetune learning rate."""
    if len(mixed) == 0:
        raise ValueError("cannot finetune on an empty dataset")
    sched = DenoiserSchedule(steps=cfg.steps, batch=cfg.batch, patch=cfg.patch, lr_init=cfg.lr,
                             lr_final=cfg.lr, adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2,
                             seed=cfg.seed)
    return fit_denoiser(mixed, sched, params=base, log_to=log_to, lr_fixed=cfg.lr)
