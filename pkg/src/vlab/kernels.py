"""Volterra kernels, their operator actions and covariances.

Three families are provided:

``levy_fbm``
    ``K(t, s) = (t - s)^(H - 1/2) / Gamma(H + 1/2)``.
``stationary_fbm``
    The same power times ``2F1(1/2 - H, H - 1/2; H + 1/2; 1 - t/s)``; the
    process it generates has stationary increments.
``multifractional``
    The stationary kernel with a time varying index, ``K_{H(t)}(t, s)``.

Integrals of the kernel are computed with composite Gauss rules.  Near
``s = t`` the factor ``(t - s)^(H - 1/2)`` is absorbed into a Gauss-Jacobi
weight.  Near ``s = 0`` the stationary kernel behaves like
``s^(-|H - 1/2|)``; there the mesh is refined geometrically down to the clamp
level and the remaining sliver is integrated with the leading power.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, KernelSingularityError
from .grid import SampledFunction, UniformGrid
from .specfun import hyp2f1, v_h

__all__ = [
    "FAMILIES",
    "KernelModel",
    "KernelClampWarning",
    "kernel_eval",
    "kernel_band_primitive",
    "band_tables",
    "synthesis_matrix",
    "apply_K",
    "apply_K_factorized",
    "apply_K_adjoint",
    "adjoint_band_averages",
    "covariance",
    "covariance_matrix",
    "covariance_fbm_closed",
    "covariance_levy_closed",
]

FAMILIES = ("levy_fbm", "stationary_fbm", "multifractional")

# kernel arguments below CLAMP * horizon are moved up to that level
CLAMP = 1e-8
GAUSS_POINTS = 8
FAR_GAUSS_POINTS = 4
# bands this many steps away from both singular points use the short rule
FAR_BANDS = 8


class KernelClampWarning(RuntimeWarning):
    """A kernel argument was clamped away from the origin."""


@dataclass(frozen=True)
class KernelModel:
    """Kernel family with its Hurst data.

    Parameters
    ----------
    family : {"levy_fbm", "stationary_fbm", "multifractional"}
    hurst : float, optional
        Hurst index in ``(0, 1)`` for the two fBm families.
    hurst_fn : SampledFunction, optional
        Time varying index for the multifractional family, with values in
        ``(1/2, 1)``.  It is interpolated linearly between its nodes.
    alpha : float, optional
        Regularity parameter.  Defaults to ``hurst`` for the fBm families and
        to half of ``inf H - 1/2`` for the multifractional one.
    horizon : float
        Right end of the time interval the model lives on.
    """

    family: str
    hurst: Optional[float] = None
    hurst_fn: Optional[SampledFunction] = None
    alpha: Optional[float] = None
    horizon: float = 1.0

    def __post_init__(self):
        fam = self.family.replace("-", "_")
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if fam == "multifractional":
            if self.hurst_fn is None:
                raise DomainError("multifractional kernel needs hurst_fn")
            hv = self.hurst_fn.values
            if not (np.min(hv) > 0.5 and np.max(hv) < 1.0):
                raise DomainError("hurst_fn values must lie in (1/2, 1)")
            if self.hurst_fn.grid.horizon < self.horizon * (1 - 1e-12):
                raise DomainError("hurst_fn does not cover the horizon")
            bound = float(np.min(hv)) - 0.5
            if self.alpha is None:
                object.__setattr__(self, "alpha", 0.5 * bound)
            elif not 0 < self.alpha < bound:
                raise DomainError(
                    f"alpha must lie in (0, inf H - 1/2) = (0, {bound:.6g})")
        else:
            if self.hurst is None or not 0.0 < self.hurst < 1.0:
                raise DomainError(f"hurst must lie in (0, 1), got {self.hurst!r}")
            object.__setattr__(self, "hurst", float(self.hurst))
            if self.alpha is None:
                object.__setattr__(self, "alpha", self.hurst)
            elif self.alpha != self.hurst:
                raise DomainError("alpha equals hurst for the fBm families")
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def homogeneous(self) -> bool:
        """Whether ``K(lt, ls) = l^(H - 1/2) K(t, s)`` holds."""
        return self.family != "multifractional"

    def hurst_at(self, t) -> np.ndarray:
        if self.family != "multifractional":
            return np.full(np.shape(t), self.hurst)
        g = self.hurst_fn
        return np.interp(t, g.t, g.values)

    def origin_exponent(self, t) -> np.ndarray:
        """Power of ``s`` describing ``K(t, s)`` as ``s -> 0``."""
        if self.family == "levy_fbm":
            return np.zeros(np.shape(t))
        return -np.abs(self.hurst_at(t) - 0.5)

    def describe(self) -> dict:
        out = {"family": self.family, "alpha": self.alpha, "horizon": self.horizon}
        if self.family == "multifractional":
            out["hurst_fn"] = {"t": self.hurst_fn.t.tolist(),
                               "H": self.hurst_fn.values.tolist()}
        else:
            out["hurst"] = self.hurst
        return out


def _raw_kernel(family: str, H, t, s):
    """Kernel values for ``0 < s < t`` (no checks, broadcasting)."""
    H = np.asarray(H, dtype=float)
    d = t - s
    power = d ** (H - 0.5) / special.gamma(H + 0.5)
    if family == "levy_fbm":
        return power
    # (t - s)^(H-1/2) (t/s)^(H-1/2) F(1/2-H, 1; H+1/2; 1 - s/t) is the Pfaff
    # image of the textbook form and avoids the huge argument 1 - t/s
    f = hyp2f1(0.5 - H, 1.0, H + 0.5, 1.0 - s / t)
    return power * (t / s) ** (H - 0.5) * f


def kernel_eval(model: KernelModel, t, s):
    """Pointwise kernel ``K(t, s)``; zero for ``s >= t``.

    For the stationary and multifractional families ``s <= 0`` raises
    :class:`KernelSingularityError` and ``0 < s < 1e-8 T`` is clamped to
    ``1e-8 T`` with a :class:`KernelClampWarning`.
    """
    t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    out = np.zeros(t.shape)
    live = s < t
    if model.family != "levy_fbm":
        if np.any(live & (s <= 0)):
            raise KernelSingularityError("stationary kernel is undefined at s <= 0")
        floor = CLAMP * model.horizon
        low = live & (s < floor)
        if np.any(low):
            warnings.warn(
                f"{int(low.sum())} kernel argument(s) clamped to s={floor:g}",
                KernelClampWarning, stacklevel=2)
            s = np.where(low, floor, s)
            live = s < t
    elif np.any(live & (s < 0)):
        raise DomainError("kernel arguments must be non-negative")
    if np.any(live):
        tl, sl = t[live], s[live]
        out[live] = _raw_kernel(model.family, model.hurst_at(tl), tl, sl)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# quadrature rules

@lru_cache(maxsize=None)
def _legendre(m: int):
    x, w = special.roots_legendre(m)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=512)
def _jacobi(m: int, e: float):
    """Nodes on [0, 1] and weights for ``int_0^1 (1 - x)^e g(x) dx``."""
    x, w = special.roots_jacobi(m, e, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (1.0 + e)


def _gl(lo, hi, m=GAUSS_POINTS):
    x, w = _legendre(m)
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    return (lo + (hi - lo) * x).ravel(), ((hi - lo) * w).ravel()


def _right_singular(lo, hi, e, m=GAUSS_POINTS):
    """Rule for ``(hi - r)^e`` times smooth on ``[lo, hi]``, as plain weights."""
    x, w = _jacobi(m, round(float(e), 12))
    L = hi - lo
    r = lo + L * x
    return r, w * L / (1.0 - x) ** e


def _origin_rule(hi, e, floor):
    """Rule for ``r^e`` times smooth on ``[0, hi]``.

    Halving panels down to ``floor``; the last sliver uses the leading power.
    """
    if e == 0.0:
        return _gl(0.0, hi)
    levels = max(0, int(math.floor(math.log2(hi / floor))))
    edges = hi * 0.5 ** np.arange(levels + 1)
    r, w = _gl(edges[1:], edges[:-1])
    eps = edges[-1]
    return np.append(r, eps), np.append(w, eps / (1.0 + e))


def _interval_rule(lo, hi, right_exp=None, origin_exp=0.0, floor=0.0,
                   gap=None):
    """Composite rule on ``[lo, hi]``.

    ``right_exp`` is the exponent of a singular factor at ``hi`` (``None``
    when the integrand is smooth there).  ``gap`` is the distance from ``hi``
    to a singular point just outside the interval.  ``origin_exp`` applies
    when ``lo == 0``.
    """
    length = hi - lo
    if length <= 0:
        return np.empty(0), np.empty(0)
    rs, ws = [], []
    at_origin = lo == 0.0 and origin_exp != 0.0
    mid = lo + 0.5 * length if (at_origin or right_exp is not None or gap is not None) else hi
    if at_origin:
        r, w = _origin_rule(mid, origin_exp, floor)
    else:
        r, w = _gl(lo, mid)
    rs.append(r)
    ws.append(w)
    if mid < hi:
        # halve toward hi until the pieces match the local scale
        d = hi - mid
        edges = [mid]
        while gap is not None and d > gap and len(edges) < 60:
            d *= 0.5
            edges.append(hi - d)
        if len(edges) > 1:
            r, w = _gl(np.array(edges[:-1]), np.array(edges[1:]))
            rs.append(r)
            ws.append(w)
        if right_exp is not None and right_exp != 0.0:
            r, w = _right_singular(edges[-1], hi, right_exp)
        else:
            r, w = _gl(edges[-1], hi)
        rs.append(r)
        ws.append(w)
    return np.concatenate(rs), np.concatenate(ws)


def kernel_band_primitive(model: KernelModel, a: float, b: float, t: float) -> float:
    """``int_a^{min(b, t)} K(t, s) ds``."""
    if not 0 <= a < b:
        raise DomainError("need 0 <= a < b")
    c = min(b, t)
    if c <= a:
        return 0.0
    H = float(model.hurst_at(t))
    right = H - 0.5 if c == t else None
    gap = t - c if c < t else None
    # quadrature floor relative to the band, as in the synthesis tables
    r, w = _interval_rule(a, c, right, float(model.origin_exponent(t)),
                          CLAMP * (c - a), gap)
    return float(w @ _raw_kernel(model.family, H, t, r))


# ---------------------------------------------------------------------------
# band tables: integrals of K(t_k, .) against the hat functions of the grid

def _row_rule(k: int, h: float, H: float, origin_exp: float, floor: float):
    """Nodes, weights, band index and local coordinate for row ``t_k``."""
    rs, ws, bs = [], [], []
    t = k * h
    # band 0
    if origin_exp != 0.0:
        r, w = _origin_rule(0.5 * h, origin_exp, floor)
        rs.append(r); ws.append(w); bs.append(np.zeros(r.size, dtype=int))
        if k == 1:
            r, w = _right_singular(0.5 * h, h, H - 0.5)
        else:
            r, w = _gl(0.5 * h, h)
        rs.append(r); ws.append(w); bs.append(np.zeros(r.size, dtype=int))
    elif k == 1:
        r, w = _right_singular(0.0, h, H - 0.5)
        rs.append(r); ws.append(w); bs.append(np.zeros(r.size, dtype=int))
    else:
        r, w = _gl(0.0, h)
        rs.append(r); ws.append(w); bs.append(np.zeros(r.size, dtype=int))
    if k >= 2:
        inner = np.arange(1, k - 1)
        far = (inner >= FAR_BANDS) & (inner <= k - 1 - FAR_BANDS)
        for sel, m in ((~far, GAUSS_POINTS), (far, FAR_GAUSS_POINTS)):
            idx = inner[sel]
            if idx.size:
                r, w = _gl(idx * h, (idx + 1) * h, m)
                rs.append(r); ws.append(w); bs.append(np.repeat(idx, m))
        r, w = _right_singular((k - 1) * h, t, H - 0.5)
        rs.append(r); ws.append(w); bs.append(np.full(r.size, k - 1))
    r = np.concatenate(rs)
    w = np.concatenate(ws)
    b = np.concatenate(bs)
    theta = r / h - b
    return r, w, b, theta


def _build_tables(model: KernelModel, n: int, h: float, floor: float):
    """Lower-triangular tables ``(P, P1)`` with ``P[k, i] = int_band K(t_k, s)
    ds`` and ``P1[k, i]`` the same integral weighted by the local coordinate.
    """
    P = np.zeros((n + 1, n))
    P1 = np.zeros((n + 1, n))
    for k in range(1, n + 1):
        t = k * h
        H = float(model.hurst_at(t)) if model.family == "multifractional" else model.hurst
        e0 = float(model.origin_exponent(t))
        r, w, b, theta = _row_rule(k, h, H, e0, floor)
        kv = w * _raw_kernel(model.family, H, t, r)
        P[k, :k] = np.bincount(b, kv, minlength=k)
        P1[k, :k] = np.bincount(b, kv * theta, minlength=k)
    return P, P1


class _TableCache:
    """Unit-step tables for homogeneous kernels, grown on demand."""

    def __init__(self, maxsize: int = 6):
        self._lock = threading.Lock()
        self._store: dict = {}
        self._order: list = []
        self.maxsize = maxsize

    def get(self, family: str, H: float, n: int):
        key = (family, H)
        with self._lock:
            hit = self._store.get(key)
            if hit is not None and hit[0].shape[1] >= n:
                self._touch(key)
                return hit[0][: n + 1, :n], hit[1][: n + 1, :n]
        # unit step: t_k = k.  The quadrature floor is a fixed fraction of the
        # step, so a table grown for a larger n gives the same leading rows
        unit = KernelModel(family, hurst=H, horizon=float(n))
        P, P1 = _build_tables(unit, n, 1.0, CLAMP)
        P.flags.writeable = False
        P1.flags.writeable = False
        with self._lock:
            self._store[key] = (P, P1)
            self._touch(key)
            while len(self._order) > self.maxsize:
                self._store.pop(self._order.pop(0), None)
        return P, P1

    def _touch(self, key):
        if key in self._order:
            self._order.remove(key)
        self._order.append(key)

    def clear(self):
        with self._lock:
            self._store.clear()
            self._order.clear()


_TABLES = _TableCache()


def band_tables(model: KernelModel, grid: UniformGrid):
    """Hat-function moments of the kernel on ``grid``.

    Returns
    -------
    M0, M1 : ndarray, shape (n + 1, n)
        ``M0[k, i] = int_{t_i}^{t_{i+1}} K(t_k, s) (1 - theta) ds`` and
        ``M1[k, i]`` the same with ``theta``, where ``theta = (s - t_i)/h``.
        Rows with ``k <= i`` are zero.
    """
    n, h = grid.n, grid.h
    if model.homogeneous:
        P, P1 = _TABLES.get(model.family, model.hurst, n)
        scale = h ** (model.hurst + 0.5)
        return (P - P1) * scale, P1 * scale
    P, P1 = _build_tables(model, n, h, CLAMP * h)
    return P - P1, P1


def synthesis_matrix(model: KernelModel, grid: UniformGrid) -> np.ndarray:
    """``A[k, i] = (1/h) int_{t_i}^{t_{i+1}} K(t_k, s) ds``.

    ``A @ diff(B)`` is the path obtained by feeding the piecewise linear
    interpolant of ``B`` through the Volterra operator.
    """
    n, h = grid.n, grid.h
    if model.homogeneous:
        P, _ = _TABLES.get(model.family, model.hurst, n)
        return P * h ** (model.hurst - 0.5)
    M0, M1 = band_tables(model, grid)
    return (M0 + M1) / h


def apply_K(model: KernelModel, f: SampledFunction) -> SampledFunction:
    """``Kf(t) = int_0^t K(t, s) f(s) ds`` at every node, ``f`` linear between nodes."""
    M0, M1 = band_tables(model, f.grid)
    v = f.values
    return SampledFunction(f.grid, M0 @ v[:-1] + M1 @ v[1:])


def apply_K_factorized(model: KernelModel, f: SampledFunction) -> SampledFunction:
    """Stationary kernel action through weighted fractional integrals.

    Uses ``K f = I^1 x^(H-1/2) I^(H-1/2) x^(1/2-H) f`` for ``H > 1/2`` and
    ``K f = I^(2H) x^(1/2-H) I^(1/2-H) x^(H-1/2) f`` for ``H < 1/2``.  An
    independent route to :func:`apply_K`, less accurate near the origin.
    """
    from .fracops import frac_integral

    if model.family != "stationary_fbm":
        raise DomainError("factorized form is only available for stationary_fbm")
    H = model.hurst
    x = f.t
    with np.errstate(divide="ignore"):
        if H == 0.5:
            return frac_integral(f, 1.0)
        if H > 0.5:
            inner = np.where(x > 0, x ** (0.5 - H), 0.0) * f.values
            # the weight blows up at 0; use the value of the mean on band 0
            inner[0] = f.values[0] * (x[1] ** (0.5 - H)) / (1.5 - H)
            g = frac_integral(SampledFunction(f.grid, inner), H - 0.5).values
            g = x ** (H - 0.5) * g
            out = frac_integral(SampledFunction(f.grid, g), 1.0).values
        else:
            inner = x ** (H - 0.5)
            inner[0] = 0.0
            inner = inner * f.values
            g = frac_integral(SampledFunction(f.grid, inner), 0.5 - H).values
            g = np.where(x > 0, x ** (0.5 - H), 0.0) * g
            out = frac_integral(SampledFunction(f.grid, g), 2.0 * H).values
    return SampledFunction(f.grid, out)


# ---------------------------------------------------------------------------
# adjoint

def _step_values(u: SampledFunction, k: int) -> np.ndarray:
    """Midpoint values of ``u`` on the first ``k`` intervals."""
    v = u.values
    return 0.5 * (v[:k] + v[1 : k + 1])


def adjoint_band_averages(model: KernelModel, u: SampledFunction, T: float,
                          A: Optional[np.ndarray] = None) -> np.ndarray:
    """Band averages ``(1/h) int_band K*_T u`` for the bands inside ``[0, T]``.

    ``u`` is read as the step function with its midpoint values.  With
    ``A = synthesis_matrix`` this is ``sum_j u_j (A[j+1, i] - A[j, i])``.
    """
    grid = u.grid
    k = grid.index_of(T)
    if A is None:
        A = synthesis_matrix(model, grid)
    ubar = _step_values(u, k)
    return ubar @ np.diff(A[: k + 1, :k], axis=0)


def apply_K_adjoint(model: KernelModel, u, T: float,
                    grid: Optional[UniformGrid] = None) -> SampledFunction:
    """Adjoint operator on ``[0, T]`` at the nodes.

    ``u`` is read as the step function equal to ``u_j`` on each interval
    ``(t_j, t_{j+1}]`` and the result is
    ``sum_{t_j >= s} u_j (K(t_{j+1}, s) - K(t_j, s))``, which reproduces
    ``K(t_k, .)`` for the indicator of ``[0, t_k]``.

    Parameters
    ----------
    u : SampledFunction or callable
        Sampled data give ``u_j`` as the mean of the two end values.  A
        callable is evaluated at the interval midpoints and needs ``grid``.
    grid : UniformGrid, optional
        Grid for a callable ``u``.

    Returns
    -------
    SampledFunction
        Values on the grid truncated at ``T``.
    """
    if isinstance(u, SampledFunction):
        grid = u.grid
        k = grid.index_of(T)
        ubar = _step_values(u, k)
    else:
        if grid is None:
            raise DomainError("a callable integrand needs a grid")
        k = grid.index_of(T)
        mid = grid.nodes[:k] + 0.5 * grid.h
        ubar = np.asarray(u(mid), dtype=float) * np.ones(k)
    sub = grid.truncate(k)
    Kn = node_kernel_matrix(model, sub)
    # out_i = sum_j ubar_j (Kn[j+1, i] - Kn[j, i])
    out = ubar @ np.diff(Kn, axis=0)
    return SampledFunction(sub, out)


def node_kernel_matrix(model: KernelModel, grid: UniformGrid) -> np.ndarray:
    """``Kn[j, i] = K(t_j, t_i)`` with zeros on and above the diagonal.

    The origin column of singular families is evaluated at the clamp level.
    """
    t = grid.nodes
    n = grid.n
    tt, ss = np.meshgrid(t, t, indexing="ij")
    live = ss < tt
    out = np.zeros((n + 1, n + 1))
    s_live = ss[live]
    if model.family != "levy_fbm":
        s_live = np.maximum(s_live, CLAMP * model.horizon)
    t_live = tt[live]
    out[live] = _raw_kernel(model.family, model.hurst_at(t_live), t_live, s_live)
    return out


# ---------------------------------------------------------------------------
# covariance

def covariance(model: KernelModel, t: float, s: float) -> float:
    """``R(t, s) = int_0^{min(t, s)} K(t, r) K(s, r) dr`` by quadrature."""
    lo_t, hi_t = (t, s) if t <= s else (s, t)
    if lo_t <= 0:
        return 0.0
    H_lo = float(model.hurst_at(lo_t))
    H_hi = float(model.hurst_at(hi_t))
    same = hi_t == lo_t
    right = 2.0 * H_lo - 1.0 if same else H_lo - 0.5
    gap = None if same else hi_t - lo_t
    e0 = float(model.origin_exponent(lo_t) + model.origin_exponent(hi_t))
    r, w = _interval_rule(0.0, lo_t, right, e0, CLAMP * model.horizon, gap)
    k1 = _raw_kernel(model.family, H_lo, lo_t, r)
    k2 = k1 if same else _raw_kernel(model.family, H_hi, hi_t, r)
    return float(w @ (k1 * k2))


def covariance_matrix(model: KernelModel, times: Sequence[float]) -> np.ndarray:
    """Matrix of :func:`covariance` values, symmetric by construction."""
    times = np.asarray(times, dtype=float)
    m = times.size
    C = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            C[i, j] = C[j, i] = covariance(model, times[i], times[j])
    return C


def covariance_fbm_closed(H: float, t, s):
    """``(V_H / 2)(s^2H + t^2H - |t - s|^2H)``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    e = 2.0 * H
    out = 0.5 * v_h(H) * (np.abs(s) ** e + np.abs(t) ** e - np.abs(t - s) ** e)
    return float(out) if out.ndim == 0 else out


def covariance_levy_closed(H: float, t, s):
    """Covariance of the Lévy kernel in closed form.

    For ``s <= t`` it equals ``s^(H+1/2) t^(H-1/2) F(1/2-H, 1; H+3/2; s/t)``
    divided by ``(H + 1/2) Gamma(H + 1/2)^2``.
    """
    t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    lo, hi = np.minimum(t, s), np.maximum(t, s)
    g2 = special.gamma(H + 0.5) ** 2
    out = np.zeros(lo.shape)
    pos = lo > 0
    ratio = lo[pos] / hi[pos]
    off = ratio < 1.0
    f = np.empty_like(ratio)
    f[off] = hyp2f1(0.5 - H, 1.0, H + 1.5, ratio[off])
    # Gauss summation at argument 1
    f[~off] = (H + 0.5) / (2.0 * H)
    out[pos] = lo[pos] ** (H + 0.5) * hi[pos] ** (H - 0.5) * f / ((H + 0.5) * g2)
    return float(out) if out.ndim == 0 else out
