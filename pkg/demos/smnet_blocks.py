"""
Inside the generator
====================

A walk through the pieces of SMNet on tiny tensors: the channel gate, the
blur-pool downsampler and a full forward pass.
"""

import torch

from pngan.generator import (MAB, GeneratorConfig, SMNet, blur_pool_down, closed_form_parameter_count,
                             count_parameters, fca_forward)

torch.manual_seed(0)

###############################################################################
# The channel gate multiplies each channel by a number between 1 and 2.
# With a zero kernel every gate is exactly 1.5.

x = torch.randn(1, 4, 8, 8)
print("gate with zero kernel is 1.5:", torch.equal(fca_forward(x, torch.zeros(3), 0.0), 1.5 * x))
print("gate with a learned kernel:", (fca_forward(x, torch.tensor([0.5, -1.0, 2.0]), 0.1) / x)[0, :, 0, 0])

###############################################################################
# Blur-pool downsampling smooths with a [1, 2, 1] binomial before dropping
# every other pixel. Shifting the input by two pixels shifts the output by
# one, away from the borders.

img = torch.rand(1, 1, 16, 16, dtype=torch.float64)
moved = torch.roll(img, shifts=2, dims=-1)
a = blur_pool_down(moved, 2)[..., 2:-2, 2:-2]
b = torch.roll(blur_pool_down(img, 2), shifts=1, dims=-1)[..., 2:-2, 2:-2]
print("interior mismatch after a 2-pixel shift:", float((a - b).abs().max()))

###############################################################################
# A freshly built generator returns its input untouched, because the last
# convolution starts at zero. Training moves it away from the identity.

g = SMNet(GeneratorConfig(t=1, n=1, channels=8))
noisy = torch.rand(2, 3, 16, 16)
print("fresh generator is the identity:", torch.equal(g(noisy), noisy))
print("one attention block keeps the shape:", tuple(MAB(8)(torch.randn(1, 8, 16, 16)).shape))

###############################################################################
# The default network (3 groups, 2 blocks each, 64 channels) has 939,019
# weights. The closed-form count and the module agree.

print("closed form:", closed_form_parameter_count(3, 2, 64), " counted:", count_parameters(SMNet()))
