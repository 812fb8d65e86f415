"""Monte Carlo check of the change-of-variables formula for smooth fBm.

Prints the verification table for a few functions and Hurst indices, then
shows that rough models are refused.

Run with ``python demos/ito_residual.py`` (about a minute).
"""

from vlab import KernelModel, RngSeed
from vlab.errors import UnsupportedRegimeError
from vlab.verify import check_ito_residual, format_table

reports = [check_ito_residual(KernelModel("stationary_fbm", hurst=H), f, 1.0, 512, 2000,
                              RngSeed(0))
           for H in (0.6, 0.8) for f in ("cos", "cube")]
print(format_table(reports))
try:
    check_ito_residual(KernelModel("stationary_fbm", hurst=0.3), "cos", 1.0, 512, 100,
                       RngSeed(0))
except UnsupportedRegimeError as exc:
    print("refused:", exc)
