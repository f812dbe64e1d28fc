"""
The whole pipeline on a laptop
==============================

Train a denoiser on toy camera noise, teach the generator to turn white
Gaussian noise into something that looks like it, then check the domain
gap and use the generated pairs to train another denoiser.

The sizes below finish in a few minutes on one CPU core. Raise the step
counts for better numbers.
"""

import numpy as np
import torch

from pngan.denoiser import DenoiserConfig
from pngan.discriminator import DiscriminatorConfig
from pngan.evaluation import dataset_psnr, domain_report
from pngan.generator import GeneratorConfig, generate_dataset
from pngan.imaging import PairedDataset, synthetic_scenes
from pngan.noise import AwgnConfig, ToyCameraConfig, synthesize
from pngan.training import DenoiserSchedule, TrainConfig, fit_denoiser, train_gan

torch.set_num_threads(1)
camera = ToyCameraConfig(a=0.01, b=0.02, correlation_radius=1)
awgn = AwgnConfig(50)


def paired(clean, noise, seed, source="real"):
    return PairedDataset(tuple((c, synthesize(c, noise, seed=seed + i)) for i, c in enumerate(clean)), source)


train = paired(synthetic_scenes(200, 64, seed=1), camera, seed=0)
test_clean = synthetic_scenes(40, 64, seed=2)
test = paired(test_clean, camera, seed=10_000)

###############################################################################
# Step 1: a small residual denoiser trained on the "real" pairs. It is
# frozen afterwards and used to compare denoised fake and real images.

small = DenoiserConfig(depth=6, width=32)
dd = fit_denoiser(train, DenoiserSchedule(steps=600, batch=8, patch=32), config=small)
print("denoiser L1: %.4f -> %.4f" % (dd.loss_curve[0], np.mean(dd.loss_curve[-50:])))

###############################################################################
# Step 2: adversarial training. The generator starts from white Gaussian
# noise at sigma 50 and learns to reshape it.

cfg = TrainConfig(total_steps=400, batch=8, patch=32, generator=GeneratorConfig(t=2, n=2, channels=16),
                  discriminator=DiscriminatorConfig(width=32))
g, d, state = train_gan(train, awgn, cfg, dd)
print("last record:", {k: round(v, 4) for k, v in state.history[-1].items()})

###############################################################################
# Step 3: how close is the generated noise? A ratio below one means the
# generated residuals are nearer the real ones than plain AWGN is.

generated = generate_dataset(test_clean, awgn, g, seed=3)
baseline = paired(test_clean, awgn, seed=20_000, source="synthetic")
report = domain_report(generated, test, baseline)
print("MMD ratio generated/baseline: %.3f" % report["ratio"])

###############################################################################
# Step 4: train one denoiser on generated pairs and one on AWGN pairs, and
# score both on the held-out camera-noise images.

clean = synthetic_scenes(200, 64, seed=4)
on_generated = fit_denoiser(generate_dataset(clean, awgn, g, seed=5), DenoiserSchedule(steps=600, patch=32),
                            config=small)
on_awgn = fit_denoiser(paired(clean, awgn, seed=30_000, source="synthetic"), DenoiserSchedule(steps=600, patch=32),
                       config=small)
print("PSNR trained on generated: %.2f dB" % dataset_psnr(on_generated, test))
print("PSNR trained on AWGN:      %.2f dB" % dataset_psnr(on_awgn, test))
