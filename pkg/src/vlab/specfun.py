"""Special functions used by the kernel formulas.

``hyp2f1`` is evaluated on the real line for ``z < 1``.  Negative arguments
are folded into ``[0, 1)`` with the Pfaff transformation; arguments close to
one use the ``1 - w`` connection formula so that kernel evaluations near
``s -> 0`` (where the argument of the stationary fBm kernel runs off to
``-inf``) stay cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, HypergeometricError

__all__ = [
    "DomainError",
    "HypergeometricError",
    "HypergeometricArgs",
    "gamma_fn",
    "hyp2f1",
    "v_h",
]

SERIES_RTOL = 1e-16
SERIES_MAX_TERMS = 10_000
# above this argument the connection formula replaces the direct series
CONNECTION_THRESHOLD = 0.5
# c - a - b closer than this to an integer is treated as degenerate
DEGENERATE_STEP = 3e-3


def _is_nonpositive_integer(x):
    x = np.asarray(x, dtype=float)
    return (x <= 0) & (x == np.round(x))


def gamma_fn(x):
    """Gamma function, raising :class:`DomainError` at the poles."""
    arr = np.asarray(x, dtype=float)
    if np.any(_is_nonpositive_integer(arr)):
        raise DomainError(f"gamma has a pole at {x!r}")
    out = special.gamma(arr)
    return float(out) if out.ndim == 0 else out


def v_h(H: float) -> float:
    """Variance constant of the fBm covariance, ``Var B^H_1 = V_H``.

    Written as ``Gamma(2-2H) sinc(H-1/2) / (2H)`` which is the same quantity
    as ``Gamma(2-2H) cos(pi H) / (pi H (1-2H))`` with the 0/0 at ``H = 1/2``
    removed analytically.
    """
    H = float(H)
    if not 0.0 < H < 1.0:
        raise DomainError(f"Hurst index must lie in (0, 1), got {H}")
    return math.gamma(2.0 - 2.0 * H) * float(np.sinc(H - 0.5)) / (2.0 * H)


@dataclass(frozen=True)
class HypergeometricArgs:
    """Real parameters ``(a, b, c, z)`` of ``2F1``."""

    a: float
    b: float
    c: float
    z: float

    def __post_init__(self):
        if _is_nonpositive_integer(self.c):
            raise DomainError(f"c={self.c} is a non-positive integer")
        if not self.z < 1.0:
            raise DomainError(f"z={self.z} outside the real domain z < 1")

    def value(self) -> float:
        return float(hyp2f1(self.a, self.b, self.c, self.z))


def _series(a, b, c, w):
    """Direct power series, vectorised over equally shaped 1-d arrays."""
    total = np.ones_like(w)
    term = np.ones_like(w)
    # terms may shrink and grow again until k exceeds the parameter sizes
    k_monotone = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.abs(c)) + 2.0
    active = np.arange(w.size)
    aa, bb, cc, ww, km = a, b, c, w, k_monotone
    for k in range(SERIES_MAX_TERMS):
        term_a = term[active] * (aa + k) * (bb + k) / ((cc + k) * (k + 1.0)) * ww
        term[active] = term_a
        total[active] += term_a
        done = (np.abs(term_a) <= SERIES_RTOL * np.abs(total[active])) & (k + 1 >= km)
        # a vanishing Pochhammer factor terminates the series
        done |= term_a == 0.0
        if np.any(done):
            keep = ~done
            active, aa, bb, cc, ww, km = (
                active[keep], aa[keep], bb[keep], cc[keep], ww[keep], km[keep])
            if active.size == 0:
                return total
    raise HypergeometricError(
        f"2F1 series did not converge in {SERIES_MAX_TERMS} terms "
        f"(a={aa[0]:.6g}, b={bb[0]:.6g}, c={cc[0]:.6g}, w={ww[0]:.6g}, "
        f"{active.size} arguments unconverged)")


def _gamma_ratio(num, den):
    """prod Gamma(num) / prod Gamma(den) using log-gamma and signs."""
    log = np.zeros(np.broadcast(*num, *den).shape)
    sign = np.ones_like(log)
    for x in num:
        log = log + special.gammaln(x)
        sign = sign * special.gammasgn(x)
    zero = np.zeros_like(log, dtype=bool)
    for x in den:
        pole = _is_nonpositive_integer(x)
        zero |= pole
        log = log - np.where(pole, 0.0, special.gammaln(x))
        sign = sign * np.where(pole, 1.0, special.gammasgn(x))
    return np.where(zero, 0.0, sign * np.exp(log))


def _connection(a, b, c, v):
    """Linear transformation in ``v = 1 - w``; requires c - a - b non-integer."""
    s = c - a - b
    first = _gamma_ratio([c, s], [c - a, c - b]) * _series(a, b, 1.0 - s, v)
    second = (_gamma_ratio([c, -s], [a, b]) * v ** s
              * _series(c - a, c - b, 1.0 + s, v))
    return first + second


def _near_one(a, b, c, v):
    """2F1 at ``w = 1 - v`` for w above the threshold, a and b not polynomial."""
    s = c - a - b
    m = np.round(s)
    # (1-w)^s varies on the scale 1/|log(1-w)| in the parameters
    step = DEGENERATE_STEP / np.maximum(1.0, -np.log(v) / 4.0)
    degenerate = np.abs(s - m) < 2.0 * step
    out = np.empty_like(v)
    if np.any(~degenerate):
        k = ~degenerate
        out[k] = _connection(a[k], b[k], c[k], v[k])
    if np.any(degenerate):
        # 2F1 is analytic in a while the connection formula is singular at
        # integer c - a - b.  Interpolate in a from nodes on both sides.
        k = degenerate
        bk, ck, vk = b[k], c[k], v[k]
        a_star = ck - bk - m[k]
        x = a[k] - a_star
        offsets = [step[k] * j for j in (-3.0, -2.0, -1.0, 1.0, 2.0, 3.0)]
        vals = [_connection(a_star + d, bk, ck, vk) for d in offsets]
        acc = np.zeros_like(vk)
        for i, di in enumerate(offsets):
            basis = np.ones_like(vk)
            for j, dj in enumerate(offsets):
                if j != i:
                    basis *= (x - dj) / (di - dj)
            acc += basis * vals[i]
        out[k] = acc
    return out


def hyp2f1(a, b, c, z):
    """Gauss hypergeometric function ``2F1(a, b; c; z)`` for real ``z < 1``.

    Broadcasts over array arguments.  The value is exactly symmetric in
    ``(a, b)``.

    Raises
    ------
    DomainError
        ``c`` is a non-positive integer or ``z >= 1``.
    HypergeometricError
        A series needed more than ``SERIES_MAX_TERMS`` terms.
    """
    a, b, c, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c, z)))
    shape = z.shape
    a, b, c, z = (np.array(v, dtype=float).ravel() for v in (a, b, c, z))
    if np.any(_is_nonpositive_integer(c)):
        raise DomainError("c must not be a non-positive integer")
    if np.any(~(z < 1.0)):
        raise DomainError("hyp2f1 is implemented for real z < 1 only")

    lo, hi = np.minimum(a, b), np.maximum(a, b)
    a, b = lo, hi
    # a zero numerator parameter leaves only the k = 0 term
    z = np.where((a == 0.0) | (b == 0.0), 0.0, z)

    neg = z < 0.0
    pre = np.ones_like(z)
    w = z.copy()
    # 1 - w kept separately: it underflows relative precision as z -> -inf
    v = 1.0 - z
    bb = b.copy()
    # Pfaff: F(a,b;c;z) = (1-z)^(-a) F(a, c-b; c; z/(z-1))
    pre[neg] = (1.0 - z[neg]) ** (-a[neg])
    w[neg] = z[neg] / (z[neg] - 1.0)
    v[neg] = 1.0 / (1.0 - z[neg])
    bb[neg] = c[neg] - b[neg]

    out = np.empty_like(z)
    polynomial = _is_nonpositive_integer(a) | _is_nonpositive_integer(bb)
    direct = (w <= CONNECTION_THRESHOLD) | polynomial
    if np.any(direct):
        out[direct] = _series(a[direct], bb[direct], c[direct], w[direct])
    far = ~direct
    if np.any(far):
        out[far] = _near_one(a[far], bb[far], c[far], v[far])
    out *= pre
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out
