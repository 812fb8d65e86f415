"""Symmetric partition sums on coupled dyadic grids.

For ``u = X`` the sum equals ``X(T)^2 / 2`` on every grid, so the levels only
move because the synthesized path itself is refined.  The trace part of
the sum for ``u = X`` approaches the deterministic value ``V / 2``.

Run with ``python demos/symmetric_sums.py``.
"""

import numpy as np

from vlab import Integrand, KernelModel, RngSeed, UniformGrid
from vlab.integrals import r_pi_parts, stratonovich_estimate
from vlab.paths import make_bundle
from vlab.specfun import v_h

model = KernelModel("stationary_fbm", hurst=0.7)
x = Integrand.composite(lambda v: v, lambda v: np.ones_like(v))

est = stratonovich_estimate(x, model, RngSeed(0), 1.0, [64, 128, 256, 512, 1024], paths=50)
for n, v in est.values_by_level:
    print(f"n={n:5d}  mean sum {v:+.5f}")
print(f"extrapolated {est.extrapolated:+.5f} +- {est.stderr:.5f}   (E = V/2 = {v_h(0.7) / 2:.5f})")
print("warnings:", est.warnings or "none")

print("\ntrace part for u = X on one path")
for n in (128, 512, 2048):
    parts = r_pi_parts(x, make_bundle(model, UniformGrid(n), RngSeed(1)), 1.0)
    print(f"n={n:5d}  total {parts.total:+.5f}  divergence {parts.divergence:+.5f}"
          f"  trace {parts.trace:+.5f}")
