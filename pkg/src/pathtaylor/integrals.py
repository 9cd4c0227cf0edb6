"""Iterated Stratonovich integrals on discretized paths.

Stochastic integrals use the midpoint rule ``sum 1/2 (phi_k + phi_{k+1}) dB_k``
and time integrals the trapezoid rule, so that the discrete integrals obey
the exact product rule ``a_{k+1} b_{k+1} - a_k b_k = 1/2 (a_k + a_{k+1}) db
+ 1/2 (b_k + b_{k+1}) da``.  Identities that follow from the product rule
(shuffle, squares, integration by parts) then hold up to rounding.

A word ``theta = (theta_1, ..., theta_n)`` is integrated innermost-first:
``theta_1`` is the driver of the innermost integral and ``theta_n`` of the
outermost one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brownian import SamplePath, TimeGrid
from .errors import QueryError
from .indices import as_theta


@dataclass(frozen=True, eq=False)
class GridProcess:
    """Values of an adapted integrand at every node of ``grid``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[-1] != self.grid.N + 1:
            raise QueryError(f"process has {v.shape[-1]} nodes, grid has {self.grid.N + 1}")
        if not np.all(np.isfinite(v)):
            raise QueryError("process values must be finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Step2Signature:
    increment: np.ndarray
    second_level: np.ndarray
    levy_area: np.ndarray


# ---------------------------------------------------------------------------
# array kernels; ``w`` has shape (..., d, N+1), processes (..., N+1)


def driver_increments(w: np.ndarray, dt: float, i: int, lo: int = 0, hi: int | None = None) -> np.ndarray:
    """Increments of driver ``i`` over steps ``lo..hi-1`` (``i = 0`` is time)."""
    n = w.shape[-1] - 1
    hi = n if hi is None else hi
    if i == 0:
        return np.full(w.shape[:-2] + (hi - lo,), dt)
    x = w[..., i - 1, lo : hi + 1]
    return x[..., 1:] - x[..., :-1]


def cumulative(phi: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Running midpoint sum ``out[k] = sum_{j<k} 1/2 (phi_j + phi_{j+1}) dx_j``."""
    terms = 0.5 * (phi[..., :-1] + phi[..., 1:]) * dx
    out = np.zeros(np.broadcast_shapes(terms.shape[:-1]) + (terms.shape[-1] + 1,))
    np.cumsum(terms, axis=-1, out=out[..., 1:])
    return out


def midpoint_sum(phi: np.ndarray, dx: np.ndarray) -> np.ndarray:
    return np.sum(0.5 * (phi[..., :-1] + phi[..., 1:]) * dx, axis=-1)


def layered(theta, phi: np.ndarray, w: np.ndarray, dt: float, ks: int, kt: int) -> np.ndarray:
    """Materialize ``r -> I^theta_{s,r}(phi)`` on nodes ``ks..kt``.

    ``phi`` holds the integrand on the same nodes (or broadcasts to them).
    """
    theta = as_theta(theta)
    cur = np.broadcast_to(phi, np.broadcast_shapes(np.shape(phi), w.shape[:-2] + (kt - ks + 1,)))
    if not theta:
        return np.array(cur, dtype=float)
    for a in theta:
        cur = cumulative(cur, driver_increments(w, dt, a, ks, kt))
    return cur


def _window_values(phi, grid: TimeGrid, ks: int, kt: int, batch=()) -> np.ndarray:
    if phi is None:
        return np.ones(batch + (kt - ks + 1,))
    if isinstance(phi, GridProcess):
        if phi.grid != grid:
            raise QueryError("integrand and path live on different grids")
        return phi.values[..., ks : kt + 1]
    arr = np.asarray(phi, dtype=float)
    if arr.ndim == 0:
        return np.full(batch + (kt - ks + 1,), float(arr))
    if arr.shape[-1] != grid.N + 1:
        raise QueryError(f"integrand has {arr.shape[-1]} nodes, grid has {grid.N + 1}")
    return arr[..., ks : kt + 1]


def _window(path: SamplePath, s: float, t: float) -> tuple[int, int]:
    ks, kt = path.grid.index(s), path.grid.index(t)
    if ks > kt:
        raise QueryError(f"interval endpoints out of order: s={s} > t={t}")
    return ks, kt


# ---------------------------------------------------------------------------
# public operations on single paths


def stratonovich_integral(phi, i: int, path: SamplePath, s: float, t: float) -> float:
    """Midpoint (``i >= 1``) or trapezoid (``i = 0``) integral of ``phi`` over ``[s, t]``."""
    if not 0 <= i <= path.d:
        raise QueryError(f"driver index {i} outside 0..{path.d}")
    ks, kt = _window(path, s, t)
    vals = _window_values(phi, path.grid, ks, kt)
    return float(midpoint_sum(vals, driver_increments(path.values, path.grid.dt, i, ks, kt)))


def iterated_process(theta, phi, path: SamplePath, s: float, t: float) -> np.ndarray:
    """The outermost layer ``r -> I^theta_{s,r}(phi)`` on the nodes of ``[s, t]``."""
    theta = as_theta(theta)
    if any(not 0 <= a <= path.d for a in theta):
        raise QueryError(f"index {theta} has entries outside 0..{path.d}")
    ks, kt = _window(path, s, t)
    vals = _window_values(phi, path.grid, ks, kt)
    return layered(theta, vals, path.values, path.grid.dt, ks, kt)


def iterated_integral(theta, phi, path: SamplePath, s: float, t: float) -> float:
    """``I^theta_{s,t}(phi)``; ``phi=None`` means the constant 1.

    The empty word returns ``phi`` at ``t``.
    """
    return float(iterated_process(theta, phi, path, s, t)[-1])


def signed_values(theta, w: np.ndarray, dt: float, a: int, b: int, phi=1.0) -> np.ndarray:
    """Array kernel of ``signed_integral`` between node indices ``a`` and ``b``."""
    theta = as_theta(theta)
    if a <= b:
        return layered(theta, phi, w, dt, a, b)[..., -1]
    sign = -1.0 if len(theta) % 2 else 1.0
    return sign * layered(theta[::-1], phi, w, dt, b, a)[..., -1]


def signed_integral(theta, phi, path: SamplePath, a: float, b: float) -> float:
    """Iterated integral with orientation: for ``a > b`` the reversed word on
    ``[b, a]`` times ``(-1)**len(theta)``."""
    theta = as_theta(theta)
    ka, kb = path.grid.index(a), path.grid.index(b)
    if ka <= kb:
        return iterated_integral(theta, phi, path, a, b)
    sign = -1.0 if len(theta) % 2 else 1.0
    return sign * iterated_integral(theta[::-1], phi, path, b, a)


def step2_signature(path: SamplePath, s: float, t: float) -> Step2Signature:
    """Increment, second-level matrix ``S[i, j] = int B^i_{s,r} o dB^j_r`` and Levy area."""
    ks, kt = _window(path, s, t)
    if ks == kt:
        raise QueryError("step-2 signature needs s < t")
    d = path.d
    second = np.empty((d, d))
    for i in range(1, d + 1):
        inner = layered((i,), 1.0, path.values, path.grid.dt, ks, kt)
        for j in range(1, d + 1):
            second[i - 1, j - 1] = midpoint_sum(inner, driver_increments(path.values, path.grid.dt, j, ks, kt))
    incr = path.values[:, kt] - path.values[:, ks]
    return Step2Signature(incr, second, second - second.T)


def ibp_sides(theta, phi, path: SamplePath, s: float, t: float) -> tuple[float, float]:
    """Both sides of the integration-by-parts expansion of
    ``int_s^t phi_r I^{rev(theta[1:])}_{s,r} d_{theta_1} r``.

    Right side: ``sum_i (-1)^(i-1) I^{theta[:i]}(phi) * I^{rev(theta[i:])}(1)``.
    """
    theta = as_theta(theta)
    if not theta:
        raise QueryError("integration by parts needs a non-empty index")
    ks, kt = _window(path, s, t)
    w, dt = path.values, path.grid.dt
    vals = _window_values(phi, path.grid, ks, kt)
    inner = layered(theta[1:][::-1], 1.0, w, dt, ks, kt)
    lhs = midpoint_sum(vals * inner, driver_increments(w, dt, theta[0], ks, kt))
    rhs = 0.0
    for i in range(1, len(theta) + 1):
        left = layered(theta[:i], vals, w, dt, ks, kt)[-1]
        right = layered(theta[i:][::-1], 1.0, w, dt, ks, kt)[-1]
        rhs += (-1) ** (i - 1) * left * right
    return float(lhs), float(rhs)


def ibp_identity_residual(theta, phi, path: SamplePath, s: float, t: float) -> float:
    """Left minus right side of the integration-by-parts identity (see ``ibp_sides``)."""
    lhs, rhs = ibp_sides(theta, phi, path, s, t)
    return lhs - rhs


def alternating_sum(theta, path: SamplePath, s: float, t: float) -> float:
    """``sum_{i=0}^n (-1)^i I^{theta[:i]} I^{rev(theta[i:])}`` with unit integrands."""
    theta = as_theta(theta)
    ks, kt = _window(path, s, t)
    w, dt = path.values, path.grid.dt
    total = 0.0
    for i in range(len(theta) + 1):
        a = layered(theta[:i], 1.0, w, dt, ks, kt)[-1]
        b = layered(theta[i:][::-1], 1.0, w, dt, ks, kt)[-1]
        total += (-1) ** i * a * b
    return float(total)


# ---------------------------------------------------------------------------
# all base points at once


class IteratedTable:
    """``I^theta_{s,r}(1)`` for every pair of nodes ``s <= r`` from global sums.

    The layered midpoint recursion is linear in the base-point constants, so
    each word from base ``s`` splits exactly into
    ``sum_k c_k(s) * Q_k(r)`` where the ``Q_k`` are iterated sums started at
    node 0.  Building the table costs ``O(n^2 N)`` per word; evaluating at any
    ``(s, r)`` is then a short dot product.

    Parameters
    ----------
    w : ndarray, shape (..., d, N+1)
    dt : float
    """

    def __init__(self, w: np.ndarray, dt: float):
        self.w = w
        self.dt = dt
        ones = np.ones(w.shape[:-2] + (w.shape[-1],))
        self._ones = ones
        self._cache: dict[tuple, list[tuple[np.ndarray, np.ndarray]]] = {(): [(ones, ones)]}
        self._cum: dict[tuple, np.ndarray] = {}

    def _terms(self, theta: tuple):
        if theta in self._cache:
            return self._cache[theta]
        prev = self._terms(theta[:-1])
        a = theta[-1]
        dx = driver_increments(self.w, self.dt, a)
        terms = []
        const = 0.0
        for c, q in prev:
            cq = cumulative(q, dx)
            terms.append((c, cq))
            const = const - c * cq
        terms.append((const, self._ones))
        self._cache[theta] = terms
        return terms

    def value(self, theta, s_idx, r_idx) -> np.ndarray:
        """Evaluate at node indices; ``s_idx`` and ``r_idx`` broadcast together."""
        theta = as_theta(theta)
        s_idx, r_idx = np.broadcast_arrays(np.asarray(s_idx), np.asarray(r_idx))
        total = 0.0
        for c, q in self._terms(theta):
            total = total + np.take(c, s_idx, axis=-1) * np.take(q, r_idx, axis=-1)
        return total

    def signed(self, theta, a_idx, b_idx) -> np.ndarray:
        """Orientation-aware value: reversed word and sign ``(-1)^n`` where ``a > b``."""
        theta = as_theta(theta)
        a_idx, b_idx = np.broadcast_arrays(np.asarray(a_idx), np.asarray(b_idx))
        fwd = self.value(theta, np.minimum(a_idx, b_idx), np.maximum(a_idx, b_idx))
        if len(theta) <= 1:
            bwd = fwd
        else:
            bwd = self.value(theta[::-1], np.minimum(a_idx, b_idx), np.maximum(a_idx, b_idx))
        sign = -1.0 if len(theta) % 2 else 1.0
        return np.where(a_idx <= b_idx, fwd, sign * bwd)
