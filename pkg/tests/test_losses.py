import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
from gradcheck import fd_relative_errors, randomize
from pngan.denoiser import DenoiserConfig, ResidualDenoiser
from pngan.losses import (EPS, FeatureExtractor, LossWeights, adversarial_losses, l1_alignment,
                          perceptual_loss, total_objective)

D = torch.float64


def tiny_denoiser(seed=0):
    return randomize(ResidualDenoiser(DenoiserConfig(depth=3, width=2)).double(), seed, scale=0.3).freeze()


def numpy_fx(fx, x):
    """Loop evaluation of a feature extractor on one ``(3, H, W)`` image."""
    for i in range(fx.n_layers):
        w, b = getattr(fx, f"w{i}").numpy(), getattr(fx, f"b{i}").numpy()
        x = oracles.conv2d(x, w, b, fx.stride)
        if i < fx.n_layers - 1:
            x = np.maximum(x, 0)
    return x


def numpy_denoise(dd, x):
    y = x
    for i, conv in enumerate(dd.convs):
        y = oracles.conv2d(y, conv.weight.detach().numpy(), conv.bias.detach().numpy())
        if i < len(dd.convs) - 1:
            y = np.maximum(y, 0)
    return np.clip(x - y, 0, 1)


# ---- L1 alignment ----------------------------------------------------------

def test_l1_identical_is_zero():
    x = torch.rand(2, 3, 8, 8, dtype=D)
    assert l1_alignment(x, x.clone(), tiny_denoiser()) == 0
    assert l1_alignment(x, x.clone()) == 0


def test_l1_single_entry():
    a = torch.full((1, 3, 4, 4), 0.5, dtype=D)
    b = a.clone()
    b[0, 0, 2, 1] += 0.1
    identity = ResidualDenoiser(DenoiserConfig(depth=2, width=2)).double().freeze()
    assert float(l1_alignment(a, b, identity)) == pytest.approx(0.1, abs=1e-15)
    assert float(l1_alignment(a, b)) == pytest.approx(0.1, abs=1e-15)


def test_l1_matches_loop_oracle(rng):
    dd = tiny_denoiser(1)
    for _ in range(5):
        a, b = rng.uniform(0, 1, (2, 3, 4, 4)), rng.uniform(0, 1, (2, 3, 4, 4))
        ref = np.mean([np.abs(numpy_denoise(dd, a[k]) - numpy_denoise(dd, b[k])).sum() for k in range(2)])
        out = float(l1_alignment(torch.from_numpy(a), torch.from_numpy(b), dd))
        assert out == pytest.approx(ref, rel=1e-10)


def test_l1_identity_denoiser_equals_plain_l1(rng):
    identity = ResidualDenoiser(DenoiserConfig(depth=2, width=2)).double().freeze()
    a, b = torch.rand(3, 3, 8, 8, dtype=D), torch.rand(3, 3, 8, 8, dtype=D)
    assert torch.equal(l1_alignment(a, b, identity), l1_alignment(a, b))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        l1_alignment(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 8))
    with pytest.raises(ValueError):
        perceptual_loss(torch.zeros(1, 3, 4, 4), torch.zeros(2, 3, 4, 4), None, FeatureExtractor())


# ---- perceptual -------------------------------------------------------------

def test_perceptual_identical_is_zero():
    x = torch.rand(2, 3, 8, 8, dtype=D)
    assert perceptual_loss(x, x.clone(), tiny_denoiser(), FeatureExtractor()) == 0


def test_perceptual_identity_features():
    a = torch.full((1, 3, 4, 4), 0.5, dtype=D)
    b = a.clone()
    b[0, 1, 0, 3] += 0.2
    assert float(perceptual_loss(a, b, None, FeatureExtractor("identity"))) == pytest.approx(0.04, abs=1e-15)


def test_perceptual_matches_loop_oracle(rng):
    fx = FeatureExtractor(widths=(4, 4, 4))
    dd = tiny_denoiser(2)
    for _ in range(3):
        a, b = rng.uniform(0, 1, (2, 3, 8, 8)), rng.uniform(0, 1, (2, 3, 8, 8))
        ref = np.mean([((numpy_fx(fx, numpy_denoise(dd, a[k])) - numpy_fx(fx, numpy_denoise(dd, b[k]))) ** 2).sum()
                       for k in range(2)])
        out = float(perceptual_loss(torch.from_numpy(a), torch.from_numpy(b), dd, fx))
        assert out == pytest.approx(ref, rel=1e-10)


def test_feature_extractor_fixed_and_frozen():
    a, b = FeatureExtractor(), FeatureExtractor()
    assert all(torch.equal(x, y) for x, y in zip(a.buffers(), b.buffers()))
    assert list(a.parameters()) == []
    out = a(torch.rand(1, 3, 64, 64))
    assert out.shape == (1, 64, 8, 8)


def test_feature_extractor_import_hook():
    w = torch.randn(5, 3, 3, 3, dtype=D)
    fx = FeatureExtractor("pretrained-import", layers=[(w, torch.zeros(5, dtype=D))], stride=1)
    assert fx(torch.rand(1, 3, 8, 8, dtype=D)).shape == (1, 5, 8, 8)
    with pytest.raises(ValueError):
        FeatureExtractor("pretrained-import")
    with pytest.raises(ValueError):
        FeatureExtractor("vgg")


# ---- adversarial ------------------------------------------------------------

def test_adversarial_half():
    m = torch.full((2, 4, 4), 0.5, dtype=D)
    ld, lg = adversarial_losses(m, m)
    assert abs(float(ld) - 2 * math.log(2)) < 1e-12 and abs(float(lg) - 2 * math.log(2)) < 1e-12


def test_adversarial_confident():
    ld, lg = adversarial_losses(torch.full((3, 2, 2), 0.9, dtype=D), torch.full((3, 2, 2), 0.1, dtype=D))
    assert float(ld) == pytest.approx(-2 * math.log(0.9), rel=1e-12)
    assert float(lg) == pytest.approx(-2 * math.log(0.1), rel=1e-12)
    assert float(ld) == pytest.approx(0.21072, abs=1e-5) and float(lg) == pytest.approx(4.60517, abs=1e-5)


def test_adversarial_clamps_saturation():
    ld, lg = adversarial_losses(torch.ones(1, 2, 2, dtype=D), torch.zeros(1, 2, 2, dtype=D))
    assert math.isfinite(ld) and math.isfinite(lg)
    assert float(lg) == pytest.approx(-2 * math.log(EPS), rel=1e-6)


def test_adversarial_matches_loop_oracle(rng):
    for _ in range(20):
        r, f = rng.uniform(0, 1, (3, 4, 4)), rng.uniform(0, 1, (3, 4, 4))
        ld, lg = adversarial_losses(torch.from_numpy(r), torch.from_numpy(f))
        ref_d, ref_g = oracles.adversarial(r, f)
        assert abs(float(ld) - ref_d) / abs(ref_d) < 1e-10
        assert abs(float(lg) - ref_g) / abs(ref_g) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_adversarial_swap_symmetry(seed):
    gen = torch.Generator().manual_seed(seed)
    r, f = torch.rand(2, 3, 3, generator=gen, dtype=D), torch.rand(2, 3, 3, generator=gen, dtype=D)
    ld, lg = adversarial_losses(r, f)
    ld2, lg2 = adversarial_losses(f, r)
    assert torch.equal(ld, lg2) and torch.equal(lg, ld2)


# ---- total -----------------------------------------------------------------

def test_total_weights():
    parts = {"l1": 1.0, "lp": 2.0, "ld": 1.0, "lg": 1.0}
    assert total_objective(parts, LossWeights()) == pytest.approx(1.0136, abs=1e-15)
    assert total_objective(parts, LossWeights(0.0, 0.0)) == 1.0
    assert total_objective(parts, LossWeights(use_lp=False, use_pixel_d=False)) == 1.0


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_p=-1)
    with pytest.raises(ValueError):
        LossWeights(lambda_ra=float("nan"))


# ---- gradients through the frozen denoiser ----------------------------------

def test_gradients_through_frozen_denoiser():
    dd = tiny_denoiser(3)
    fx = FeatureExtractor(widths=(2, 2, 2))
    i_rn = torch.rand(2, 3, 8, 8, dtype=D)
    # keep I_fn away from the clip boundaries so the denoised map is differentiable
    i_fn = (0.3 + 0.4 * torch.rand(2, 3, 8, 8, dtype=D)).requires_grad_(True)
    assert max(fd_relative_errors(lambda: l1_alignment(i_fn, i_rn, dd), [i_fn])) < 1e-4
    assert max(fd_relative_errors(lambda: perceptual_loss(i_fn, i_rn, dd, fx), [i_fn])) < 1e-4
    r = (0.1 + 0.8 * torch.rand(2, 4, 4, dtype=D)).requires_grad_(True)
    f = (0.1 + 0.8 * torch.rand(2, 4, 4, dtype=D)).requires_grad_(True)
    assert max(fd_relative_errors(lambda: adversarial_losses(r, f)[0], [r, f])) < 1e-4
    assert max(fd_relative_errors(lambda: adversarial_losses(r, f)[1], [r, f])) < 1e-4
    assert all(p.grad is None for p in dd.parameters())

