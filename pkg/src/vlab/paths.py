"""Seeded Brownian paths and two Volterra path constructions.

``synthesize_volterra`` feeds the piecewise linear interpolant of a Brownian
path through the kernel.  ``sample_volterra_exact`` draws the Gaussian vector
of node values directly from its covariance.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import DomainError, SamplingError
from .grid import SampledFunction, UniformGrid
from .kernels import (KernelModel, covariance_fbm_closed, covariance_levy_closed,
                      covariance_matrix, synthesis_matrix)

__all__ = [
    "RngSeed",
    "PathBundle",
    "sample_brownian",
    "brownian_increments",
    "synthesize_volterra",
    "make_bundle",
    "sample_volterra_exact",
    "sample_gaussian_at",
    "model_covariance",
]

_U64 = 2 ** 64
JITTER_START = 1e-12
JITTER_STOP = 1e-6


@dataclass(frozen=True)
class RngSeed:
    """Key of an independent random stream.

    ``master`` identifies the experiment and ``stream`` the path.  The pair
    keys a Philox counter-based generator, so every stream can be created
    directly without advancing a shared state.
    """

    master: int
    stream: int = 0

    def __post_init__(self):
        for name in ("master", "stream"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v < _U64:
                raise DomainError(f"{name} must be an unsigned 64-bit integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def generator(self) -> np.random.Generator:
        key = np.array([self.master, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream: int) -> "RngSeed":
        return RngSeed(self.master, stream)

    def as_dict(self) -> dict:
        return {"master": self.master, "stream": self.stream}


def brownian_increments(n: int, h: float, seed: RngSeed) -> np.ndarray:
    return np.sqrt(h) * seed.generator().standard_normal(n)


def sample_brownian(grid: UniformGrid, seed: RngSeed) -> SampledFunction:
    """Standard Brownian motion at the grid nodes, ``B(0) = 0``."""
    dB = brownian_increments(grid.n, grid.h, seed)
    return SampledFunction(grid, np.concatenate(([0.0], np.cumsum(dB))))


def synthesize_volterra(model: KernelModel, brownian: SampledFunction,
                        A: Optional[np.ndarray] = None) -> SampledFunction:
    """Volterra path driven by the linear interpolant of ``brownian``.

    ``X(t_k) = sum_i (1/h) (int_{t_i}^{t_{i+1}} K(t_k, s) ds) (B_{i+1} - B_i)``.
    """
    if A is None:
        A = synthesis_matrix(model, brownian.grid)
    return SampledFunction(brownian.grid, A @ np.diff(brownian.values))


@dataclass(frozen=True)
class PathBundle:
    """A Brownian path together with the Volterra path it drives."""

    grid: UniformGrid
    brownian: SampledFunction
    volterra: SampledFunction
    model: KernelModel
    seed: RngSeed

    def __post_init__(self):
        if self.brownian.grid != self.grid or self.volterra.grid != self.grid:
            raise DomainError("paths must share the bundle grid")
        if self.brownian.values[0] != 0.0 or self.volterra.values[0] != 0.0:
            raise DomainError("paths must start at 0")

    def coarsen(self, factor: int, A: Optional[np.ndarray] = None) -> "PathBundle":
        """Bundle on the coarser grid, re-synthesized from the subsampled B."""
        b = self.brownian.subsample(factor)
        return PathBundle(b.grid, b, synthesize_volterra(self.model, b, A),
                          self.model, self.seed)

    def to_csv(self) -> str:
        rows = ["t,B,X"]
        for t, b, x in zip(self.grid.nodes, self.brownian.values, self.volterra.values):
            rows.append(f"{t:.17g},{b:.17g},{x:.17g}")
        return "\n".join(rows) + "\n"


def make_bundle(model: KernelModel, grid: UniformGrid, seed: RngSeed,
                A: Optional[np.ndarray] = None) -> PathBundle:
    b = sample_brownian(grid, seed)
    return PathBundle(grid, b, synthesize_volterra(model, b, A), model, seed)


# ---------------------------------------------------------------------------
# exact sampling

def model_covariance(model: KernelModel, times: Sequence[float]) -> np.ndarray:
    """Covariance matrix at ``times``, in closed form where one is known."""
    times = np.asarray(times, dtype=float)
    tt, ss = np.meshgrid(times, times, indexing="ij")
    if model.family == "stationary_fbm":
        return covariance_fbm_closed(model.hurst, tt, ss)
    if model.family == "levy_fbm":
        return covariance_levy_closed(model.hurst, tt, ss)
    return covariance_matrix(model, times)


def _factor(C: np.ndarray):
    """Lower Cholesky factor, adding diagonal jitter if needed."""
    m = C.shape[0]
    try:
        return linalg.cholesky(C, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    base = np.trace(C) / m
    jitter = JITTER_START
    while jitter <= JITTER_STOP * (1 + 1e-9):
        try:
            return linalg.cholesky(C + jitter * base * np.eye(m), lower=True), jitter * base
        except linalg.LinAlgError:
            jitter *= 10.0
    raise SamplingError(
        f"covariance not positive definite after jitter {JITTER_STOP:g} * trace/n")


class _FactorCache:
    def __init__(self, maxsize: int = 8):
        self._lock = threading.Lock()
        self._store: dict = {}
        self.maxsize = maxsize

    def get(self, model: KernelModel, times: np.ndarray):
        key = (json.dumps(model.describe(), sort_keys=True), times.tobytes())
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        L, jitter = _factor(model_covariance(model, times))
        L.flags.writeable = False
        with self._lock:
            if len(self._store) >= self.maxsize:
                self._store.pop(next(iter(self._store)))
            self._store[key] = (L, jitter)
        return L, jitter


_FACTORS = _FactorCache()


def sample_gaussian_at(model: KernelModel, times: Sequence[float],
                       seeds: Iterable[RngSeed], workers: int = 1) -> np.ndarray:
    """Exact draws of ``(X(t) for t in times)``, one row per seed.

    ``times`` must be positive.  Rows are a pure function of their seed, so
    the result does not depend on ``workers``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise DomainError("sampling times must be positive")
    L, _ = _FACTORS.get(model, times)
    seeds = list(seeds)

    def draw(seed):
        return L @ seed.generator().standard_normal(times.size)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(draw, seeds))
    else:
        rows = [draw(s) for s in seeds]
    return np.array(rows).reshape(len(seeds), times.size)


def sample_volterra_exact(model: KernelModel, grid: UniformGrid, seed: RngSeed) -> SampledFunction:
    """One exact draw of the process at the grid nodes, ``X(0) = 0``.

    Raises
    ------
    SamplingError
        The covariance matrix could not be factorized even with jitter.
    """
    x = sample_gaussian_at(model, grid.nodes[1:], [seed])[0]
    return SampledFunction(grid, np.concatenate(([0.0], x)))
