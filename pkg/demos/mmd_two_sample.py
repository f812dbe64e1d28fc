"""
Measuring a domain gap with MMD
===============================

The squared maximum mean discrepancy compares two clouds of samples. It is
close to zero when they come from the same distribution.
"""

import numpy as np

from pngan.evaluation import mmd_squared

rng = np.random.default_rng(0)

###############################################################################
# Two samples from one Gaussian versus a Gaussian shifted by one unit.

for shift in (0.0, 0.25, 0.5, 1.0):
    est = mmd_squared(rng.normal(size=2000), rng.normal(shift, 1.0, size=2000))
    print(f"shift {shift:4.2f}: MMD^2 = {est.value:+.5f} (bandwidth {est.bandwidth:.3f})")

###############################################################################
# On noise it is applied to flattened 8x8x3 residual patches. White noise
# and blurred noise with the same per-pixel spread are still told apart.

from scipy.ndimage import uniform_filter

white = rng.normal(0, 0.05, size=(400, 8, 8, 3))
blurred = uniform_filter(rng.normal(0, 0.15, size=(400, 8, 8, 3)), size=(1, 3, 3, 1))
print("per-pixel std: white %.4f, blurred %.4f" % (white.std(), blurred.std()))
print("MMD^2 white vs blurred: %.4f" % mmd_squared(white.reshape(400, -1), blurred.reshape(400, -1)).value)
