"""Simulate fBm paths two ways and compare their empirical covariance.

Run with ``python demos/simulate_and_compare.py``.
"""

import numpy as np

from vlab import KernelModel, RngSeed, UniformGrid
from vlab.kernels import covariance_fbm_closed
from vlab.paths import make_bundle, sample_gaussian_at

H, n, M = 0.7, 256, 5000
model = KernelModel("stationary_fbm", hurst=H)
grid = UniformGrid(n)
seed = RngSeed(0)
probe = np.array([0.25, 0.5, 1.0])
idx = [grid.index_of(t) for t in probe]

synth = np.stack([make_bundle(model, grid, seed.child(p)).volterra.values[idx]
                  for p in range(M)])
exact = sample_gaussian_at(model, probe, [seed.child(p) for p in range(M)])
tt, ss = np.meshgrid(probe, probe, indexing="ij")
closed = covariance_fbm_closed(H, tt, ss)

np.set_printoptions(precision=4, suppress=True)
print("closed form\n", closed)
print("synthesis (Brownian increments through the kernel)\n", synth.T @ synth / M)
print("exact Gaussian sampler\n", exact.T @ exact / M)
