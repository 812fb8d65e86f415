"""Discrete stochastic integrals with respect to a Volterra process.

The central object is the symmetric sum ``R^pi_T(u)``.  It is obtained by
feeding the step function ``u`` (midpoint values on each interval) through
the adjoint operator and integrating against the linearised Brownian path.
For integrands of the form ``u_t = g(X_t)`` it splits into a discrete
Skorohod divergence and a trace summand built from the Malliavin derivative
``g'(X_t) K(t, r)``.  The two parts add up to the plug-in sum
``sum_j u_j (X_{j+1} - X_j)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError
from .grid import SampledFunction, UniformGrid
from .kernels import (CLAMP, KernelModel, _interval_rule, covariance_fbm_closed,
                      covariance_levy_closed, covariance_matrix, node_kernel_matrix,
                      synthesis_matrix)
from .paths import PathBundle, RngSeed, brownian_increments

__all__ = [
    "Integrand",
    "IntegralEstimate",
    "RPiParts",
    "riemann_sum",
    "ss_sum",
    "r_pi_sum",
    "r_pi_parts",
    "trace_term",
    "stratonovich_estimate",
    "batch_parts",
    "coupled_levels",
    "richardson",
    "empirical_order",
    "energy_derivative",
    "NON_MONOTONE",
    "NO_ORDER",
]

NON_MONOTONE = "successive differences are not decreasing"
NO_ORDER = "no positive empirical order; extrapolation skipped"

_FD_PROBE = np.linspace(-3.0, 3.0, 13)
_FD_STEP = 1e-5
_FD_TOL = 1e-4


@dataclass(frozen=True)
class Integrand:
    """Deterministic integrand or a function of the current process value.

    Use :meth:`deterministic` or :meth:`composite` to build one.
    """

    kind: str
    det_values: Optional[SampledFunction] = None
    det_fn: Optional[Callable] = None
    g: Optional[Callable] = None
    g_prime: Optional[Callable] = None

    def __post_init__(self):
        if self.kind == "deterministic":
            if (self.det_values is None) == (self.det_fn is None):
                raise DomainError("give exactly one of det_values or det_fn")
        elif self.kind == "composite":
            if self.g is None or self.g_prime is None:
                raise DomainError("composite integrand needs g and g_prime")
            x = _FD_PROBE
            fd = (self.g(x + _FD_STEP) - self.g(x - _FD_STEP)) / (2 * _FD_STEP)
            err = np.max(np.abs(fd - self.g_prime(x)))
            if not err <= _FD_TOL:
                raise DomainError(
                    f"g_prime is inconsistent with g (finite-difference gap {err:.3g})")
        else:
            raise DomainError(f"unknown integrand kind {self.kind!r}")

    @classmethod
    def deterministic(cls, values) -> "Integrand":
        """From a :class:`SampledFunction` or a vectorised callable of ``t``."""
        if isinstance(values, SampledFunction):
            return cls("deterministic", det_values=values)
        return cls("deterministic", det_fn=values)

    @classmethod
    def composite(cls, g: Callable, g_prime: Callable) -> "Integrand":
        return cls("composite", g=g, g_prime=g_prime)

    @property
    def is_composite(self) -> bool:
        return self.kind == "composite"

    def node_values(self, grid: UniformGrid, x: Optional[np.ndarray] = None) -> np.ndarray:
        if self.kind == "composite":
            if x is None:
                raise DomainError("composite integrand needs the process values")
            return np.asarray(self.g(x), dtype=float) * np.ones_like(x)
        if self.det_fn is not None:
            return np.asarray(self.det_fn(grid.nodes), dtype=float) * np.ones(grid.n + 1)
        src = self.det_values
        if src.grid == grid:
            return src.values
        ratio = src.grid.n / grid.n
        if src.grid.horizon != grid.horizon or ratio != int(ratio):
            raise DomainError("integrand grid is not a refinement of the target grid")
        return src.values[:: int(ratio)]

    def derivative_values(self, x: np.ndarray) -> np.ndarray:
        if self.kind != "composite":
            return np.zeros_like(x)
        return np.asarray(self.g_prime(x), dtype=float) * np.ones_like(x)


@dataclass
class IntegralEstimate:
    """Stochastic integral estimate over a schedule of partitions."""

    values_by_level: list
    extrapolated: float
    convergence_order: Optional[float] = None
    stderr: Optional[float] = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        ns = [n for n, _ in self.values_by_level]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise DomainError("levels must be strictly increasing")
        if len(ns) < 3:
            self.convergence_order = None

    @property
    def levels(self) -> list:
        return [n for n, _ in self.values_by_level]

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.values_by_level])

    def to_dict(self) -> dict:
        return {
            "levels": [{"n": int(n), "value": float(v)} for n, v in self.values_by_level],
            "extrapolated": float(self.extrapolated),
            "order": None if self.convergence_order is None else float(self.convergence_order),
            "stderr": None if self.stderr is None else float(self.stderr),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# elementary sums

def _check_shared(u: SampledFunction, x: SampledFunction):
    if u.grid != x.grid:
        raise DomainError("integrand and integrator must share a grid")


def riemann_sum(u: SampledFunction, x: SampledFunction) -> float:
    """``sum_i u(t_i) (x_{i+1} - x_i)``."""
    _check_shared(u, x)
    return float(u.values[:-1] @ np.diff(x.values))


def ss_sum(u: SampledFunction, x: SampledFunction) -> float:
    """``sum_i (interval mean of u) (x_{i+1} - x_i)`` with trapezoid means."""
    _check_shared(u, x)
    return float(u.interval_means() @ np.diff(x.values))


# ---------------------------------------------------------------------------
# symmetric sums

@dataclass(frozen=True)
class RPiParts:
    """Divergence and trace summand of one symmetric sum."""

    divergence: float
    trace: float

    @property
    def total(self) -> float:
        return self.divergence + self.trace


def batch_parts(u: Integrand, grid: UniformGrid, A: np.ndarray, X: np.ndarray,
                k: int, endpoint_corrected: bool = False):
    """Divergence and trace summand on ``[0, t_k]`` for a batch of paths.

    ``X`` has shape ``(M, n + 1)`` and holds the synthesized paths.  The
    integrand is the step function of midpoint values.  The plug-in sum
    ``sum_j u_j (X_{j+1} - X_j)`` equals ``sum_i a_i dB_i`` where ``a`` is the
    band-averaged adjoint of ``u``; the trace summand is
    ``sum_i int_{band i} grad_r a_i dr`` with ``grad_r X_j = A[j, i(r)]``, and
    the divergence is the plug-in sum minus the trace summand.

    With ``endpoint_corrected`` the integrand is ``u - u(t_k)`` and
    ``u(t_k) X(t_k)`` is added to the divergence.

    Returns
    -------
    divergence, trace : ndarray, shape (M,)
    """
    X = np.atleast_2d(X)
    h = grid.h
    vals = np.broadcast_to(u.node_values(grid, X), X.shape)
    mid = 0.5 * (vals[:, :k] + vals[:, 1 : k + 1])
    uT = vals[:, k]
    if endpoint_corrected:
        mid = mid - uT[:, None]
    plug_in = np.sum(mid * np.diff(X[:, : k + 1], axis=1), axis=1)
    trace = np.zeros(X.shape[0])
    if u.is_composite:
        Ak = A[: k + 1, :k]
        dA = np.diff(Ak, axis=0)
        c1 = np.einsum("ji,ji->j", Ak[:-1], dA)
        c2 = np.einsum("ji,ji->j", Ak[1:], dA)
        G = u.derivative_values(X)
        trace = 0.5 * h * (G[:, :k] @ c1 + G[:, 1 : k + 1] @ c2)
        if endpoint_corrected:
            # derivative of -g(X_T) contributes -g'(X_T) K(t_k, r)
            trace = trace - G[:, k] * h * float(Ak[k] @ Ak[k])
    divergence = plug_in - trace
    if endpoint_corrected:
        divergence = divergence + uT * X[:, k]
    return divergence, trace


def r_pi_parts(u: Integrand, bundle: PathBundle, T: float,
               A: Optional[np.ndarray] = None, endpoint_corrected: bool = False) -> RPiParts:
    """Divergence and trace summand of the symmetric sum on ``[0, T]``."""
    grid = bundle.grid
    k = grid.index_of(T)
    if A is None:
        A = synthesis_matrix(bundle.model, grid)
    d, t = batch_parts(u, grid, A, bundle.volterra.values[None, :], k, endpoint_corrected)
    return RPiParts(float(d[0]), float(t[0]))


def r_pi_sum(u: Integrand, bundle: PathBundle, T: float,
             A: Optional[np.ndarray] = None) -> float:
    """Symmetric sum ``R^pi_T(u)``: discrete divergence plus trace summand.

    For deterministic ``u`` this is the Wiener sum ``sum_i a_i dB_i`` with
    ``a_i`` the band average of the adjoint applied to ``u``.

    Raises
    ------
    DomainError
        ``T`` is not a grid node.
    """
    return r_pi_parts(u, bundle, T, A).total


def _hat_weights(h: float, k: int, e0: float, e1: float, floor: float):
    """Weights for ``int_0^{t_k} r^-e0 (t_k - r)^-e1 psi(r) dr`` with ``psi``
    linear between nodes.  Returned as ``(w0, w1)`` per band."""
    T = k * h
    w0 = np.empty(k)
    w1 = np.empty(k)
    for i in range(k):
        lo, hi = i * h, (i + 1) * h
        right = -e1 if (i == k - 1 and e1) else None
        r, w = _interval_rule(lo, hi, right, -e0 if i == 0 else 0.0, floor)
        wt = r ** (-e0) * (T - r) ** (-e1)
        th = (r - lo) / h
        w0[i] = np.sum(w * wt * (1 - th))
        w1[i] = np.sum(w * wt * th)
    return w0, w1


def trace_term(u: Integrand, bundle: PathBundle, T: float) -> float:
    """Integral over ``[0, T]`` of the diagonal trace density.

    The density at a node ``r_i`` is the step-function adjoint of
    ``t -> g'(X_t) K(t, r_i)`` evaluated at ``r_i``.  It behaves like a power
    of ``r`` at the origin (and of ``T - r`` at ``T`` when ``H < 1/2``); those
    powers are integrated exactly against the piecewise linear remainder.

    Raises
    ------
    DomainError
        ``u`` is not composite or ``T`` is not a node.
    ArithmeticError
        Non-finite kernel values.
    """
    if not u.is_composite:
        raise DomainError("trace term needs a composite integrand")
    grid = bundle.grid
    model = bundle.model
    k = grid.index_of(T)
    sub = grid.truncate(k)
    Kn = node_kernel_matrix(model, sub)       # Kn[j, i] = K(t_j, r_i)
    if not np.all(np.isfinite(Kn)):
        raise ArithmeticError("non-finite kernel values in the trace density")
    G = u.derivative_values(bundle.volterra.values[: k + 1])
    phi = G[:, None] * Kn                     # phi[j, i] = g'(X_j) K(t_j, r_i)
    dens = np.sum(0.5 * (phi[:-1] + phi[1:]) * np.diff(Kn, axis=0), axis=0)
    H0 = float(model.hurst_at(0.0))
    HT = float(model.hurst_at(T))
    e0 = 0.0 if model.family == "levy_fbm" else abs(2.0 * H0 - 1.0)
    e1 = max(0.0, 1.0 - 2.0 * HT)
    r = sub.nodes.copy()
    floor = CLAMP * model.horizon
    if model.family != "levy_fbm":
        r[0] = floor
    psi = np.empty(k + 1)
    psi[:k] = dens[:k] * r[:k] ** e0 * (T - r[:k]) ** e1
    # the sum gives no value at r = T; continue psi from the left
    if e1 or k == 1:
        psi[k] = psi[k - 1]
    else:
        psi[k] = 2.0 * psi[k - 1] - psi[k - 2]
    w0, w1 = _hat_weights(grid.h, k, e0, e1, floor)
    return float(w0 @ psi[:-1] + w1 @ psi[1:])


# ---------------------------------------------------------------------------
# coupled refinement

def richardson(values, ns: Sequence[int], orders) -> np.ndarray:
    """Repeated Richardson elimination of error terms ``C_p n^-p``.

    ``values`` has the levels on its last axis.  Each order in ``orders``
    consumes one level.
    """
    v = np.asarray(values, dtype=float)
    ns = np.asarray(ns, dtype=float)
    orders = list(np.atleast_1d(orders))
    if len(orders) >= v.shape[-1]:
        raise DomainError("need more levels than elimination orders")
    for p in orders:
        q = (ns[1:] / ns[:-1]) ** p
        v = v[..., 1:] + (v[..., 1:] - v[..., :-1]) / (q - 1.0)
        ns = ns[1:]
    return v[..., -1]


def empirical_order(values, ns: Sequence[int]) -> Optional[float]:
    """Median observed order from ratios of successive differences."""
    d = np.abs(np.diff(np.asarray(values, dtype=float)))
    if d.size < 2:
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        steps = np.log(np.asarray(ns[1:-1], float) / np.asarray(ns[:-2], float))
        orders = np.log(d[:-1] / d[1:]) / steps
    orders = orders[np.isfinite(orders)]
    return float(np.median(orders)) if orders.size else None


def _monotone(values) -> bool:
    d = np.abs(np.diff(np.asarray(values, dtype=float)))
    floor = 1e-12 * max(1.0, float(np.max(np.abs(values))))
    return not np.any(d[1:] > d[:-1] + floor)


def _check_levels(levels: Sequence[int]) -> list:
    levels = sorted(int(n) for n in levels)
    if len(levels) < 3:
        raise DomainError("at least three partition levels are required")
    for a, b in zip(levels, levels[1:]):
        r = b // a
        if b % a or r & (r - 1) or r < 2:
            raise DomainError("levels must be dyadic refinements of each other")
    return levels


def coupled_levels(u: Integrand, model: KernelModel, dB: np.ndarray, T: float,
                   levels: Sequence[int], endpoint_corrected: bool,
                   return_paths: bool = False):
    """Symmetric sums on coupled partitions for a batch of fine increments.

    ``dB`` has shape ``(M, n_max)``; coarser increments are block sums.

    Returns
    -------
    sums, x_end : ndarray, shape (M, L)
        Symmetric sums and ``X(T)`` at each level.
    X : ndarray, shape (M, levels[-1] + 1)
        Paths on the last level, only with ``return_paths``.
    """
    dB = np.atleast_2d(dB)
    M, n_max = dB.shape
    sums = np.empty((M, len(levels)))
    x_end = np.empty((M, len(levels)))
    for l, n in enumerate(levels):
        grid = UniformGrid(n, T)
        d = dB.reshape(M, n, n_max // n).sum(axis=2)
        A = synthesis_matrix(model, grid)
        X = np.zeros((M, n + 1))
        X[:, 1:] = d @ A[1:].T
        div, tr = batch_parts(u, grid, A, X, n, endpoint_corrected)
        sums[:, l] = div + tr
        x_end[:, l] = X[:, n]
    if return_paths:
        return sums, x_end, X
    return sums, x_end


def stratonovich_estimate(u: Integrand, model: KernelModel, seed: RngSeed, T: float,
                          levels: Sequence[int], order=None,
                          paths: int = 1) -> IntegralEstimate:
    """Symmetric sums on coupled dyadic partitions of ``[0, T]``.

    The Brownian increments are drawn once on the finest partition and summed
    in blocks for the coarser ones, so every level sees the same path.  When
    ``model.alpha < 1/2`` the endpoint-corrected sum ``R(u - u(T)) + u(T)
    X(T)`` is used.

    Parameters
    ----------
    order : float or sequence of float, optional
        Error orders eliminated by Richardson extrapolation.  By default the
        empirical order of the successive differences is used when it is
        positive; otherwise the finest value is reported with a warning.
    paths : int
        Number of independent paths (streams ``seed.stream + p``).  Level
        values are averaged; ``stderr`` is the standard error of the
        extrapolated value.
    """
    levels = _check_levels(levels)
    if seed.stream + paths > 2 ** 64:
        raise DomainError("stream range overflows")
    corrected = model.alpha < 0.5
    n_max = levels[-1]
    dB = np.stack([brownian_increments(n_max, T / n_max, seed.child(seed.stream + p))
                   for p in range(paths)])
    sums, _ = coupled_levels(u, model, dB, T, levels, corrected)
    mean_vals = sums.mean(axis=0)
    emp = empirical_order(mean_vals, levels)
    warns = [] if _monotone(mean_vals) else [NON_MONOTONE]
    use = order if order is not None else emp
    if use is None or (order is None and not emp > 0):
        warns.append(NO_ORDER)
        per_path = sums[:, -1]
    else:
        per_path = richardson(sums, levels, use)
    extrap = float(np.mean(per_path))
    stderr = float(np.std(per_path, ddof=1) / math.sqrt(paths)) if paths > 1 else None
    return IntegralEstimate(list(zip(levels, mean_vals.tolist())), extrap, emp, stderr, warns)


# ---------------------------------------------------------------------------
# energy

def _covariance_fn(model: KernelModel):
    if model.family == "stationary_fbm":
        return lambda a, b: covariance_fbm_closed(model.hurst, a, b)
    if model.family == "levy_fbm":
        return lambda a, b: covariance_levy_closed(model.hurst, a, b)

    def quad(a, b):
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        ta = np.unique(np.concatenate((a.ravel(), b.ravel())))
        C = covariance_matrix(model, ta)
        ia = np.searchsorted(ta, a)
        ib = np.searchsorted(ta, b)
        return C[ia, ib]

    return quad


def _energy(ubar: np.ndarray, nodes: np.ndarray, t: float, R) -> float:
    """``int (K*(u 1_[0,t]))^2`` for the step function ``ubar`` on ``nodes``."""
    j = np.searchsorted(nodes, t, side="left")
    tau = np.append(nodes[:j], t)
    ub = ubar[:j]
    if ub.size == 0:
        return 0.0
    lo, hi = tau[:-1], tau[1:]
    C = (R(hi[:, None], hi[None, :]) - R(hi[:, None], lo[None, :])
         - R(lo[:, None], hi[None, :]) + R(lo[:, None], lo[None, :]))
    return float(ub @ C @ ub)


def energy_derivative(u: Integrand, model: KernelModel, t: float, dt: float,
                      n: int = 1024) -> float:
    """Central difference of ``e(t) = int_0^1 (K*_1 (u 1_[0,t]))(s)^2 ds``.

    ``u`` is the step function with midpoint values on a grid of ``[0,
    horizon]`` (its own grid, or ``n`` intervals for a callable).  The energy
    is a quadratic form in the covariance at the step break points, evaluated
    in closed form for the fBm families.
    """
    if u.is_composite:
        raise DomainError("energy derivative needs a deterministic integrand")
    if not (dt > 0 and t - dt >= 0 and t + dt <= model.horizon * (1 + 1e-12)):
        raise DomainError("need 0 <= t - dt and t + dt <= horizon")
    grid = u.det_values.grid if u.det_values is not None else UniformGrid(n, model.horizon)
    vals = u.node_values(grid)
    ubar = 0.5 * (vals[:-1] + vals[1:])
    R = _covariance_fn(model)
    nodes = grid.nodes
    e_plus = _energy(ubar, nodes, t + dt, R)
    e_minus = _energy(ubar, nodes, t - dt, R)
    return (e_plus - e_minus) / (2.0 * dt)
