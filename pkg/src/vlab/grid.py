"""Uniform time grids and functions sampled on them."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError

__all__ = ["UniformGrid", "SampledFunction"]


@dataclass(frozen=True)
class UniformGrid:
    """Partition of ``[0, horizon]`` into ``n`` equal intervals.

    Parameters
    ----------
    n : int
        Number of intervals, at least 2.
    horizon : float
        Right end point ``T > 0``.
    """

    n: int
    horizon: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"grid needs an integer n >= 2, got {self.n!r}")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise DomainError(f"horizon must be positive, got {self.horizon!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def h(self) -> float:
        return self.horizon / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n + 1) * self.h
        t[-1] = self.horizon
        t.flags.writeable = False
        return t

    def index_of(self, t: float, atol: float = 1e-9) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        k = int(round(t / self.h))
        if not 0 <= k <= self.n or abs(k * self.h - t) > atol * max(1.0, self.horizon):
            raise DomainError(f"t={t} is not a node of {self}")
        return k

    def coarsen(self, factor: int) -> "UniformGrid":
        if factor < 1 or self.n % factor:
            raise DomainError(f"cannot coarsen n={self.n} by {factor}")
        return UniformGrid(self.n // factor, self.horizon)

    def truncate(self, k: int) -> "UniformGrid":
        """Grid on ``[0, t_k]`` with the same step."""
        return UniformGrid(k, k * self.h)


@dataclass(frozen=True)
class SampledFunction:
    """Values of a real function at the nodes of a grid.

    ``flags`` carries diagnostics attached by the operation that produced the
    values (for instance an ill-posedness warning).
    """

    grid: UniformGrid
    values: np.ndarray
    flags: tuple = field(default=(), compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n + 1,):
            raise DomainError(
                f"expected {self.grid.n + 1} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("sampled values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "flags", tuple(self.flags))

    @classmethod
    def from_callable(cls, grid: UniformGrid, fn) -> "SampledFunction":
        return cls(grid, np.broadcast_to(fn(grid.nodes), grid.nodes.shape))

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def __len__(self):
        return self.values.size

    def subsample(self, factor: int) -> "SampledFunction":
        return SampledFunction(self.grid.coarsen(factor), self.values[::factor])

    def truncate(self, k: int) -> "SampledFunction":
        return SampledFunction(self.grid.truncate(k), self.values[: k + 1])

    def interval_means(self) -> np.ndarray:
        """Trapezoid averages over each grid interval."""
        return 0.5 * (self.values[:-1] + self.values[1:])

    def increments(self) -> np.ndarray:
        return np.diff(self.values)
