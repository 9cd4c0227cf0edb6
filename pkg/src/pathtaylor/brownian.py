"""Discretized Brownian sample paths on uniform grids.

Every path carries the master seed and a stream number; the Gaussian
increments of stream ``k`` come from ``SeedSequence(seed, spawn_key=(0, k))``
so ensembles can be generated in any order or in parallel and still
reproduce bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, QueryError

# relative tolerance (in units of the step) for recognising a grid node
_NODE_TOL = 1e-9

# spawn-key tags separating independent uses of one seed
_TAG_INCREMENTS = 0
_TAG_BRIDGE = 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * T / N`` on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise ConfigurationError(f"horizon must be positive, got T={self.T}")
        if int(self.N) != self.N or self.N < 2:
            raise ConfigurationError(f"step count must be an integer >= 2, got N={self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    def index(self, t: float) -> int:
        """Return ``k`` with ``t_k == t``; raise QueryError when ``t`` is off-grid."""
        x = t / self.dt
        k = int(round(x))
        if abs(x - k) > _NODE_TOL * max(1.0, abs(x)) or k < 0 or k > self.N:
            raise QueryError(f"time {t!r} is not a node of the grid (T={self.T}, N={self.N})")
        return k

    def snap(self, t: float) -> int:
        """Index of the nearest grid node; raise QueryError outside ``[0, T]``."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.N:
            raise QueryError(f"time {t!r} lies outside [0, {self.T}]")
        return k

    def steps(self, delta: float) -> int:
        """Signed number of steps in a grid-aligned offset ``delta``."""
        x = delta / self.dt
        k = int(round(x))
        if abs(x - k) > _NODE_TOL * max(1.0, abs(x)):
            raise QueryError(f"offset {delta!r} is not a multiple of dt={self.dt}")
        return k

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.N * factor)


@dataclass(frozen=True, eq=False)
class SamplePath:
    """One discretized trajectory; ``values[:, k]`` holds the path at ``t_k``.

    The values array is made read-only on construction.
    """

    grid: TimeGrid
    values: np.ndarray
    seed: int = 0
    stream: int = 0
    refinements: tuple = field(default=())

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != self.grid.N + 1:
            raise ConfigurationError(
                f"values must have shape (d, {self.grid.N + 1}), got {np.shape(self.values)}"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("path values must be finite")
        if np.any(v[:, 0] != 0.0):
            raise ConfigurationError("paths start at the origin")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.grid.index(t)]

    def with_values(self, values: np.ndarray) -> "SamplePath":
        """Copy of the path on the same grid with replaced values (used by probes)."""
        return SamplePath(self.grid, values, self.seed, self.stream, self.refinements)


def _increments(grid: TimeGrid, d: int, seed: int, stream: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(_TAG_INCREMENTS, stream))
    rng = np.random.default_rng(ss)
    return rng.standard_normal((d, grid.N)) * np.sqrt(grid.dt)


def _check_dim(d: int) -> int:
    if int(d) != d or d < 1:
        raise ConfigurationError(f"dimension must be a positive integer, got d={d}")
    return int(d)


def simulate_path(grid: TimeGrid, d: int, seed: int, stream: int = 0) -> SamplePath:
    """Sample a ``d``-dimensional Brownian path on ``grid``.

    Parameters
    ----------
    grid : TimeGrid
    d : int
        Number of driving coordinates.
    seed : int
        Master seed.
    stream : int, optional
        Path number within the ensemble of ``seed``.
    """
    d = _check_dim(d)
    values = np.zeros((d, grid.N + 1))
    np.cumsum(_increments(grid, d, seed, stream), axis=1, out=values[:, 1:])
    return SamplePath(grid, values, int(seed), int(stream))


def simulate_ensemble(grid: TimeGrid, d: int, M: int, seed: int, start: int = 0) -> np.ndarray:
    """Values of paths ``start, ..., start+M-1`` of ``seed`` as an ``(M, d, N+1)`` array.

    Row ``k`` equals ``simulate_path(grid, d, seed, start + k).values`` exactly.
    """
    d = _check_dim(d)
    if M < 1:
        raise ConfigurationError(f"ensemble size must be >= 1, got M={M}")
    out = np.zeros((M, d, grid.N + 1))
    for k in range(M):
        np.cumsum(_increments(grid, d, seed, start + k), axis=1, out=out[k, :, 1:])
    return out


def bridge_fill(values: np.ndarray, dt: float, factor: int, rng: np.random.Generator) -> np.ndarray:
    """Insert ``factor - 1`` Brownian-bridge points into every step of ``values``.

    Works on the last axis; leading axes are treated as independent coordinates.
    Coarse nodes are copied, never recomputed.
    """
    coarse = np.asarray(values, dtype=float)
    n = coarse.shape[-1] - 1
    h = dt / factor
    fine = np.empty(coarse.shape[:-1] + (n * factor + 1,))
    fine[..., ::factor] = coarse
    left = coarse[..., :-1]
    right = coarse[..., 1:]
    prev = left
    for j in range(1, factor):
        remaining = (factor - j + 1) * h
        mean = prev + (right - prev) * (h / remaining)
        var = h * (remaining - h) / remaining
        cur = mean + np.sqrt(var) * rng.standard_normal(left.shape)
        fine[..., j::factor] = cur
        prev = cur
    return fine


def refine_path(path: SamplePath, factor: int) -> SamplePath:
    """Refine the grid by ``factor`` using Brownian bridges between coarse nodes.

    The inserted values are a deterministic function of the path's seed,
    stream, refinement history and ``factor``.
    """
    if int(factor) != factor or factor < 2:
        raise ConfigurationError(f"refinement factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    history = path.refinements + (factor,)
    key = (_TAG_BRIDGE, path.stream) + history
    rng = np.random.default_rng(np.random.SeedSequence(path.seed, spawn_key=key))
    fine = bridge_fill(path.values, path.grid.dt, factor, rng)
    return SamplePath(path.grid.refined(factor), fine, path.seed, path.stream, history)


def increment(path: SamplePath, s: float, t: float) -> np.ndarray:
    """Return ``omega_t - omega_s`` (negated automatically when ``t < s``)."""
    return path.values[:, path.grid.index(t)] - path.values[:, path.grid.index(s)]


def refine_ensemble(values: np.ndarray, grid: TimeGrid, seed: int, factor: int, start: int = 0) -> np.ndarray:
    """Refine every path of an ``(M, d, N+1)`` ensemble exactly as ``refine_path`` would."""
    out = []
    for k in range(values.shape[0]):
        path = SamplePath(grid, values[k], seed, start + k)
        out.append(refine_path(path, factor).values)
    return np.stack(out)
