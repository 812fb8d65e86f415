"""Checks that tie the numerical schemes to exact identities and oracles.

Every check returns a :class:`VerificationReport` whose ``passed`` flag is
``metric <= threshold``.  Exact grid algebra is held to ``1e-10``,
quadrature against closed forms to ``1e-3`` of the variance scale, and Monte
Carlo statistics to a fixed number of standard errors.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, UnsupportedRegimeError
from .grid import SampledFunction, UniformGrid
from .integrals import Integrand, coupled_levels, energy_derivative, richardson
from .kernels import (KernelModel, adjoint_band_averages, covariance,
                      covariance_fbm_closed, covariance_levy_closed, covariance_matrix,
                      synthesis_matrix)
from .paths import RngSeed, brownian_increments, sample_gaussian_at
from .specfun import v_h

__all__ = [
    "VerificationReport",
    "check_covariance",
    "check_ito_residual",
    "check_girsanov_shift",
    "check_restriction",
    "ITO_FUNCTIONS",
    "EXACT_TOL",
    "QUADRATURE_RTOL",
    "MC_SIGMAS",
    "ITO_SIGMAS",
    "format_table",
    "drift_density",
]

EXACT_TOL = 1e-10
QUADRATURE_RTOL = 1e-3
MC_SIGMAS = 4.0
ITO_SIGMAS = 3.0
# paths per batch in the Itô check, to bound memory
_CHUNK = 500


@dataclass
class VerificationReport:
    """Outcome of one check.

    ``passed`` is derived from ``metric <= threshold`` and cannot be set
    independently.
    """

    check_name: str
    metric: float
    threshold: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.metric <= self.threshold)

    def to_dict(self) -> dict:
        return {"name": self.check_name, "passed": self.passed,
                "metric": float(self.metric), "threshold": float(self.threshold),
                "details": _plain(self.details)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def format_table(reports: Sequence[VerificationReport]) -> str:
    """Fixed-width text table of reports."""
    width = max([len(r.check_name) for r in reports] + [5])
    lines = [f"{'check':<{width}}  {'status':<6}  {'metric':>12}  {'threshold':>12}"]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.check_name:<{width}}  {status:<6}  {r.metric:>12.4g}  {r.threshold:>12.4g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# covariance

def _closed_form(model: KernelModel, tt, ss):
    if model.family == "stationary_fbm":
        return covariance_fbm_closed(model.hurst, tt, ss), v_h(model.hurst)
    if model.family == "levy_fbm":
        C = covariance_levy_closed(model.hurst, tt, ss)
        return C, float(np.max(np.diag(C)))
    return None, None


def check_covariance(model: KernelModel, grid_nodes: Sequence[float], mc_paths: int,
                     seed: RngSeed, workers: int = 1) -> VerificationReport:
    """Quadrature covariance against the closed form and against Monte Carlo.

    The deterministic leg (fBm families only) measures the largest entrywise
    gap in units of the variance scale ``V_H`` (the largest closed-form
    variance for the Lévy family), with tolerance ``1e-3``.  The Monte Carlo
    leg draws ``mc_paths`` exact samples and reports the largest standardized
    deviation ``|C_mc - C| / se`` with ``se^2 = (C_ii C_jj + C_ij^2) / M``,
    tolerance 4.  The metric is the larger of the two legs, each divided by
    its own tolerance, so the threshold is 1.
    """
    nodes = np.asarray(sorted(float(t) for t in grid_nodes))
    if nodes.size < 2:
        raise DomainError("need at least two nodes")
    if np.any(nodes <= 0):
        raise DomainError("nodes must be positive")
    C = covariance_matrix(model, nodes)
    tt, ss = np.meshgrid(nodes, nodes, indexing="ij")
    details = {"seed": seed.as_dict(), "nodes": nodes, "mc_paths": int(mc_paths),
               "model": model.describe(), "quadrature": C}
    ratios = []
    closed, scale = _closed_form(model, tt, ss)
    if closed is not None:
        err = float(np.max(np.abs(C - closed)))
        details.update(closed_form=closed, deterministic_max_error=err,
                       deterministic_scale=scale)
        ratios.append(err / (QUADRATURE_RTOL * scale))
    if mc_paths:
        if mc_paths < 2:
            raise DomainError("the Monte Carlo leg needs at least two paths")
        seeds = [seed.child(seed.stream + p) for p in range(mc_paths)]
        Y = sample_gaussian_at(model, nodes, seeds, workers=workers)
        C_mc = Y.T @ Y / mc_paths
        d = np.diag(C)
        se = np.sqrt((d[:, None] * d[None, :] + C ** 2) / mc_paths)
        z = np.abs(C_mc - C) / se
        details.update(mc=C_mc, mc_stderr=se, mc_max_z=float(np.max(z)))
        ratios.append(float(np.max(z)) / MC_SIGMAS)
    if not ratios:
        raise DomainError("no closed form and no Monte Carlo paths: nothing to compare")
    return VerificationReport("covariance", max(ratios), 1.0, details)


# ---------------------------------------------------------------------------
# Itô formula

ITO_FUNCTIONS = {
    "square": (lambda x: x * x, lambda x: 2.0 * x, lambda x: 2.0 + 0.0 * x),
    "cube": (lambda x: x ** 3, lambda x: 3.0 * x * x, lambda x: 6.0 * x),
    "cos": (np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x)),
    "constant": (lambda x: 1.0 + 0.0 * x, lambda x: 0.0 * x, lambda x: 0.0 * x),
}


def _ito_orders(H: float):
    """Leading error orders of the coupled symmetric sums, in powers of 1/n."""
    if abs(H - 0.5) < 1e-12:
        return (1.0, 2.0, 3.0)
    return (2.0 * H, 4.0 * H - 1.0, 6.0 * H - 2.0)


def _pair_covariance(model: KernelModel):
    if model.family == "stationary_fbm":
        return lambda a, b: covariance_fbm_closed(model.hurst, a, b)
    if model.family == "levy_fbm":
        return lambda a, b: covariance_levy_closed(model.hurst, a, b)
    return np.vectorize(lambda a, b: covariance(model, a, b))


def drift_density(model: KernelModel, s: np.ndarray, T: float) -> np.ndarray:
    """``(1/2) d/ds R(s, s) - d/dt R(t, s)|_{t=s}`` by central differences.

    The first term comes from :func:`energy_derivative` with ``u = 1``; the
    second is a symmetric difference in the first argument, which cancels
    the ``|t - s|^2H`` cusp exactly.
    """
    R = _pair_covariance(model)
    one = Integrand.deterministic(lambda t: np.ones_like(t))
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    for i, si in enumerate(s):
        dt = min(1e-4 * T, 0.5 * si, 0.5 * (model.horizon - si))
        if not dt > 0:
            raise DomainError("drift density needs interior points")
        # the quadratic form telescopes for u = 1, so a coarse step grid is exact
        energy = energy_derivative(one, model, si, dt, n=16)
        cross = (R(si + dt, si) - R(si - dt, si)) / (2.0 * dt)
        out[i] = 0.5 * energy - cross
    return out


def check_ito_residual(model: KernelModel, f: str, T: float, n: int, mc_paths: int,
                       seed: RngSeed, correction: str = "closed",
                       workers: int = 1) -> VerificationReport:
    """Monte Carlo test of the change-of-variables formula with ``u = 1``.

    Per path the residual is ``f(X_T) - f(0)`` minus the symmetric-sum
    estimate of the integral of ``f'(X)`` and minus the integral of ``f''(X)``
    against the drift density (zero for the fBm families).  The symmetric
    sums are computed on the coupled levels ``n/8, n/4, n/2, n`` and the
    known error orders are removed by Richardson extrapolation path by path.
    The metric is ``|mean| / stderr`` and the threshold 3.

    Parameters
    ----------
    f : {"square", "cube", "cos", "constant"}
    n : int
        Finest partition, a multiple of 8.
    correction : {"closed", "numeric"}
        ``closed`` uses the vanishing drift density of the fBm families;
        ``numeric`` evaluates it by finite differences of the covariance
        (the only option for the multifractional family).

    Raises
    ------
    UnsupportedRegimeError
        ``model.alpha < 1/2``; the formula does not hold there.
    """
    if model.alpha < 0.5:
        raise UnsupportedRegimeError(
            f"Itô check needs alpha >= 1/2, got alpha = {model.alpha:g}")
    if f not in ITO_FUNCTIONS:
        raise DomainError(f"f must be one of {sorted(ITO_FUNCTIONS)}, got {f!r}")
    if correction not in ("closed", "numeric"):
        raise DomainError("correction must be 'closed' or 'numeric'")
    if correction == "closed" and model.family == "multifractional":
        raise DomainError("no closed-form drift density for the multifractional family")
    if n % 8 or n < 16:
        raise DomainError("n must be a multiple of 8 and at least 16")
    if mc_paths < 2:
        raise DomainError("need at least two paths")
    if not 0 < T <= model.horizon * (1 + 1e-12):
        raise DomainError("T must lie in (0, horizon]")
    fn, d1, d2 = ITO_FUNCTIONS[f]
    levels = [n // 8, n // 4, n // 2, n]
    H = float(model.hurst_at(T))
    orders = _ito_orders(H)
    g = Integrand.composite(d1, d2)
    densities = {}
    if correction == "numeric":
        for lv in levels:
            mid = (np.arange(lv) + 0.5) * (T / lv)
            densities[lv] = drift_density(model, mid, T)
    for lv in levels:
        synthesis_matrix(model, UniformGrid(lv, T))   # warm the shared table

    def chunk(start):
        stop = min(start + _CHUNK, mc_paths)
        dB = np.stack([brownian_increments(n, T / n, seed.child(seed.stream + p))
                       for p in range(start, stop)])
        sums, x_end, corr = _level_sums(g, model, dB, T, levels, d2, densities)
        return fn(x_end) - fn(0.0) - sums - corr

    starts = range(0, mc_paths, _CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(chunk, starts))
    else:
        parts = [chunk(s) for s in starts]
    res = np.concatenate(parts, axis=0)
    per_path = richardson(res, levels, orders)
    mean = float(np.mean(per_path))
    stderr = float(np.std(per_path, ddof=1) / math.sqrt(mc_paths))
    metric = abs(mean) / max(stderr, 1e-12)
    if mean == 0.0:
        metric = 0.0
    details = {"seed": seed.as_dict(), "n": n, "T": T, "levels": levels,
               "orders": list(orders), "mc_paths": mc_paths, "f": f,
               "correction": correction, "model": model.describe(),
               "mean_residual": mean, "stderr": stderr,
               "level_mean_residuals": res.mean(axis=0)}
    return VerificationReport("ito_residual", metric, ITO_SIGMAS, details)


def _level_sums(g, model, dB, T, levels, d2, densities):
    M = dB.shape[0]
    sums = np.empty((M, len(levels)))
    x_end = np.empty((M, len(levels)))
    corr = np.zeros((M, len(levels)))
    for l, lv in enumerate(levels):
        s, x, X = coupled_levels(g, model, dB, T, [lv], False, return_paths=True)
        sums[:, l] = s[:, 0]
        x_end[:, l] = x[:, 0]
        if lv in densities:
            f2 = d2(X)
            corr[:, l] = (0.5 * (f2[:, :-1] + f2[:, 1:])) @ densities[lv] * (T / lv)
    return sums, x_end, corr


# ---------------------------------------------------------------------------
# exact identities

def _brownian(grid: UniformGrid, seed: RngSeed) -> np.ndarray:
    return brownian_increments(grid.n, grid.h, seed)


def check_girsanov_shift(model: KernelModel, u: SampledFunction, v: SampledFunction,
                         seed: RngSeed) -> VerificationReport:
    """Translation of the discrete Wiener integral under a deterministic shift.

    The path increments are shifted by ``int_band v`` (trapezoid).  The
    discrete integral ``sum_i a_i dB_i``, with ``a`` the band averages of the
    adjoint applied to ``u``, must move by exactly ``sum_i a_i vbar_i h``.
    """
    if u.grid != v.grid:
        raise DomainError("u and v must share a grid")
    grid = u.grid
    T = grid.horizon
    A = synthesis_matrix(model, grid)
    a = adjoint_band_averages(model, u, T, A)
    dB = _brownian(grid, seed)
    dB_shift = dB + v.interval_means() * grid.h
    original = float(a @ dB)
    shifted = float(a @ dB_shift)
    shift = float(a @ v.interval_means()) * grid.h
    metric = abs(shifted - (original + shift))
    details = {"seed": seed.as_dict(), "n": grid.n, "T": T, "model": model.describe(),
               "original": original, "shifted": shifted, "shift": shift}
    return VerificationReport("girsanov_shift", metric, EXACT_TOL, details)


def check_restriction(model: KernelModel, u: SampledFunction, S: float, T: float,
                      seed: RngSeed) -> VerificationReport:
    """Integral of ``(u - u(S)) 1_[0,S]`` on ``[0, T]`` against the one on ``[0, S]``.

    The left leg is the Wiener sum on ``[0, T]`` of the truncated integrand
    plus ``u(S) X(S)``; the right leg is the Wiener sum of ``u`` on
    ``[0, S]``.  Both use the same Brownian increments.
    """
    grid = u.grid
    kS = grid.index_of(S)
    kT = grid.index_of(T)
    if kS > kT:
        raise DomainError("need S <= T")
    A = synthesis_matrix(model, grid)
    dB = _brownian(grid, seed)
    w = np.zeros(grid.n + 1)
    w[: kS + 1] = u.values[: kS + 1] - u.values[kS]
    left_sum = float(adjoint_band_averages(model, SampledFunction(grid, w), T, A) @ dB[:kT])
    X_S = float(A[kS] @ dB)
    left = left_sum + u.values[kS] * X_S
    right = float(adjoint_band_averages(model, u, S, A) @ dB[:kS]) if kS else 0.0
    metric = abs(left - right)
    details = {"seed": seed.as_dict(), "n": grid.n, "S": S, "T": T,
               "model": model.describe(), "left": left, "right": right}
    return VerificationReport("restriction", metric, EXACT_TOL, details)
