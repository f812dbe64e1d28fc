import copy
import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from pngan.denoiser import DenoiserConfig, FrozenModuleError, ResidualDenoiser
from pngan.discriminator import DiscriminatorConfig
from pngan.generator import GeneratorConfig
from pngan.imaging import MixSpec, PairedDataset, mix_datasets, synthetic_scenes
from pngan.losses import FeatureExtractor, LossWeights, l1_alignment
from pngan.noise import AwgnConfig, ToyCameraConfig, synthesize
from pngan.training import (DenoiserSchedule, FinetuneConfig, NumericalAbort, TrainConfig, build_gan,
                            finetune_denoiser, fit_denoiser, gan_step, load_gan_checkpoint, lr_at,
                            sample_batch, save_gan_checkpoint, train_gan)

TINY = dict(batch=2, patch=16, generator=GeneratorConfig(t=1, n=1, channels=4),
            discriminator=DiscriminatorConfig(width=4))


def toy_real(count=4, size=32, seed=0):
    clean = synthetic_scenes(count, size, seed)
    cam = ToyCameraConfig(correlation_radius=1)
    return PairedDataset(tuple((c, synthesize(c, cam, seed=seed * 31 + i)) for i, c in enumerate(clean)))


def frozen_dd(seed=0):
    net = ResidualDenoiser(DenoiserConfig(depth=3, width=4), seed=seed)
    with torch.no_grad():
        net.convs[-1].weight.uniform_(-0.05, 0.05, generator=torch.Generator().manual_seed(seed))
    return net.freeze()


def params_of(*modules):
    return [p.detach().clone() for m in modules for p in m.parameters()]


def same(a, b):
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


# ---- schedule -------------------------------------------------------------------

def test_lr_values():
    cfg = TrainConfig(total_steps=1000)
    assert lr_at(0, cfg) == 2e-4
    assert lr_at(1000, cfg) == pytest.approx(1e-6, rel=1e-12)
    assert lr_at(500, cfg) == pytest.approx(1.005e-4, rel=1e-12)
    with pytest.raises(ValueError):
        lr_at(1001, cfg)
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10**6), st.data())
def test_lr_non_increasing(total, data):
    cfg = TrainConfig(total_steps=total)
    a = data.draw(st.integers(0, total))
    b = data.draw(st.integers(a, total))
    assert lr_at(b, cfg) <= lr_at(a, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_init=1e-6, lr_final=1e-4)
    with pytest.raises(ValueError):
        TrainConfig(adam_beta2=1.0)
    with pytest.raises(ValueError):
        TrainConfig(patch=30)
    assert TrainConfig(adam_beta2=0.9999).adam_beta2 == 0.9999


# ---- single steps ------------------------------------------------------------------

def _batch(cfg, seed=0):
    gen = torch.Generator().manual_seed(seed)
    shape = (cfg.batch, 3, cfg.patch, cfg.patch)
    dt = cfg.torch_dtype
    return (0.2 + 0.6 * torch.rand(shape, generator=gen, dtype=dt),
            0.2 + 0.6 * torch.rand(shape, generator=gen, dtype=dt))


def test_g_step_descends_l1():
    identity = ResidualDenoiser(DenoiserConfig(depth=2, width=2)).double().freeze()
    base = TrainConfig(total_steps=1, weights=LossWeights(0.0, 0.0), dtype="float64", **TINY)
    i_syn, i_rn = _batch(base)
    g0, _, _ = build_gan(base)
    with torch.no_grad():
        g0.tail.weight.normal_(0, 0.01)
    with torch.no_grad():
        before = float(l1_alignment(g0(i_syn), i_rn, identity))
    lr = 1e-3
    while lr > 1e-12:
        cfg = TrainConfig(total_steps=1, lr_init=lr, lr_final=lr, weights=LossWeights(0.0, 0.0),
                          dtype="float64", **TINY)
        g, d, state = build_gan(cfg)
        g.load_state_dict(g0.state_dict())
        gan_step(i_syn, i_rn, state, g, d, identity, None, cfg)
        with torch.no_grad():
            after = float(l1_alignment(g(i_syn), i_rn, identity))
        if after < before:
            break
        lr /= 10
    assert lr > 1e-12


def test_sub_steps_are_isolated():
    cfg = TrainConfig(total_steps=3, **TINY)
    g, d, state = build_gan(cfg)
    dd = frozen_dd()
    seen = {}

    def wrap(opt, mine, other, tag):
        step = opt.step

        def checked(*a, **k):
            before_other = params_of(other)
            before_mine = params_of(mine)
            out = step(*a, **k)
            seen[tag] = same(before_other, params_of(other)) and not same(before_mine, params_of(mine))
            return out
        opt.step = checked

    wrap(state.opt_g, g, d, "g")
    wrap(state.opt_d, d, g, "d")
    i_syn, i_rn = _batch(cfg)
    gan_step(i_syn, i_rn, state, g, d, dd, FeatureExtractor(), cfg)
    assert seen == {"g": True, "d": True}


def test_frozen_modules_untouched_and_gradient_flows_through_dd():
    cfg = TrainConfig(total_steps=4, dtype="float64", **TINY)
    g, d, state = build_gan(cfg)
    dd = frozen_dd().double()
    fx = FeatureExtractor().double()
    dd_before, fx_before = params_of(dd), [b.clone() for b in fx.buffers()]
    i_syn, i_rn = _batch(cfg)
    # gradient reaches G through D_d while D_d itself gets none
    i_fn = g(i_syn)
    grads = torch.autograd.grad(l1_alignment(i_fn, i_rn, dd), list(g.parameters()), allow_unused=True)
    assert any(gr is not None and gr.abs().sum() > 0 for gr in grads)
    assert all(p.grad is None and not p.requires_grad for p in dd.parameters())
    for _ in range(4):
        gan_step(i_syn, i_rn, state, g, d, dd, fx, cfg)
    assert same(dd_before, params_of(dd))
    assert all(torch.equal(a, b) for a, b in zip(fx_before, fx.buffers()))
    assert state.step == 4 and len(state.history) == 4


def test_unfrozen_denoiser_rejected():
    cfg = TrainConfig(total_steps=1, **TINY)
    g, d, state = build_gan(cfg)
    i_syn, i_rn = _batch(cfg)
    with pytest.raises(FrozenModuleError):
        gan_step(i_syn, i_rn, state, g, d, ResidualDenoiser(DenoiserConfig(2, 2)), None, cfg)
    with pytest.raises(FrozenModuleError):
        train_gan(toy_real(), AwgnConfig(50), cfg, ResidualDenoiser(DenoiserConfig(2, 2)))


def test_nan_aborts_with_snapshot():
    cfg = TrainConfig(total_steps=1, **TINY)
    g, d, state = build_gan(cfg)
    i_syn, i_rn = _batch(cfg)
    i_rn[0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericalAbort) as info:
        gan_step(i_syn, i_rn, state, g, d, frozen_dd(), None, cfg)
    snap = info.value.snapshot
    assert snap["step"] == 0 and np.isnan(snap["i_rn"]).any()


def test_sample_batch_keyed_by_step():
    data = toy_real()
    a = sample_batch(data, 3, 16, seed=1, step=5)
    b = sample_batch(data, 3, 16, seed=1, step=5)
    c = sample_batch(data, 3, 16, seed=1, step=6)
    assert all(np.array_equal(x[0], y[0]) for x, y in zip(a, b))
    assert not all(np.array_equal(x[0], y[0]) for x, y in zip(a, c))


# ---- full runs -----------------------------------------------------------------------

def test_zero_steps_returns_initial_params():
    cfg = TrainConfig(total_steps=0, **TINY)
    g, d, state = train_gan(toy_real(), AwgnConfig(50), cfg, frozen_dd())
    g0, d0, _ = build_gan(cfg)
    assert same(params_of(g, d), params_of(g0, d0)) and state.step == 0


def test_runs_are_deterministic_and_resumable(tmp_path):
    real, noise = toy_real(), AwgnConfig(50)
    cfg = TrainConfig(total_steps=6, checkpoint_every=3, sample_every=3, seed=2, **TINY)
    outs = []
    for name in ("a", "b"):
        g, d, st_ = train_gan(real, noise, cfg, frozen_dd(), run_dir=tmp_path / name)
        outs.append(save_gan_checkpoint(tmp_path / f"{name}.ckpt", g, d, st_, cfg).read_bytes())
    assert outs[0] == outs[1]
    run = tmp_path / "a"
    assert (run / "ckpt" / "step-3").exists() and (run / "ckpt" / "step-6").exists()
    assert (run / "samples" / "step-3.png").exists()
    lines = [json.loads(x) for x in (run / "log.jsonl").read_text().splitlines()]
    assert [x["step"] for x in lines] == list(range(6))
    assert set(lines[0]) == {"step", "l1", "lp", "ld", "lg", "total"}

    # split run: stop at 3, resume from that checkpoint in a fresh call
    train_gan(real, noise, cfg, frozen_dd(), run_dir=tmp_path / "c", stop_at=3)
    g, d, st_ = train_gan(real, noise, cfg, frozen_dd(), resume_from=tmp_path / "c" / "ckpt" / "step-3")
    assert save_gan_checkpoint(tmp_path / "c.ckpt", g, d, st_, cfg).read_bytes() == outs[0]


def test_checkpoint_bytes_roundtrip(tmp_path):
    cfg = TrainConfig(total_steps=2, **TINY)
    g, d, state = train_gan(toy_real(), AwgnConfig(50), cfg, frozen_dd())
    p1 = save_gan_checkpoint(tmp_path / "1.ckpt", g, d, state, cfg)
    g2, d2, s2 = load_gan_checkpoint(p1, cfg)
    p2 = save_gan_checkpoint(tmp_path / "2.ckpt", g2, d2, s2, cfg)
    assert p1.read_bytes() == p2.read_bytes()
    assert s2.step == 2


# ---- denoiser finetuning ---------------------------------------------------------------

def test_finetune_zero_steps_and_q0_reduction():
    real, base = toy_real(), frozen_dd()
    out = finetune_denoiser(base, real, FinetuneConfig(steps=0, patch=16))
    assert same(params_of(out), params_of(base)) and out.frozen
    gen = PairedDataset(toy_real(seed=5).pairs, "generated")
    cfg = FinetuneConfig(steps=5, batch=2, patch=16, seed=3)
    mixed = finetune_denoiser(base, mix_datasets(real, gen, MixSpec(0.0)), cfg)
    plain = fit_denoiser(real, DenoiserSchedule(steps=5, batch=2, patch=16, lr_init=cfg.lr, lr_final=cfg.lr,
                                                seed=3), params=base, lr_fixed=cfg.lr)
    assert same(params_of(mixed), params_of(plain))
    assert not same(params_of(mixed), params_of(base))
    assert same(params_of(base), params_of(frozen_dd()))  # base left untouched
    with pytest.raises(ValueError):
        finetune_denoiser(base, PairedDataset(()), cfg)
