"""Path functionals, random fields and a catalog of analytically known examples.

Derivative words follow the convention that ``theta = (theta_1, ..., theta_n)``
stands for ``d_{theta_1} ... d_{theta_n} u``: ``theta_n`` acts first and
``theta_1`` last.  Entry 0 is the time derivative, entry ``i`` the path
derivative in coordinate ``i``.

Every functional can be evaluated on a batch of paths: ``w`` has shape
``(..., d, N+1)``, node indices ``k`` any integer array shape ``K``, and the
result has shape ``(..., *K)``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from .brownian import SamplePath, TimeGrid
from .errors import CapabilityError, ConfigurationError, QueryError
from .indices import as_theta, weight
from .integrals import cumulative, driver_increments

DEFAULT_ORDER = 6


def _node_values(w: np.ndarray, k) -> np.ndarray:
    """Path values at nodes ``k`` with the coordinate axis moved last: ``(..., *K, d)``."""
    return np.moveaxis(np.take(w, np.asarray(k), axis=-1), w.ndim - 2, -1)


class SymbolicState:
    """Smooth ``v(t, x_1..x_{d'}, w_1..w_d)`` with cached partial derivatives.

    Parameters
    ----------
    expr : str or sympy expression
        In the symbols ``t``, ``x1, x2, ...`` and ``w1, w2, ...``.
    """

    def __init__(self, expr, d: int, d_prime: int = 0):
        self.t = sp.Symbol("t")
        self.x = tuple(sp.Symbol(f"x{i + 1}") for i in range(d_prime))
        self.w = tuple(sp.Symbol(f"w{i + 1}") for i in range(d))
        names = {s.name: s for s in (self.t,) + self.x + self.w}
        self.expr = sp.sympify(expr, locals=names)
        extra = self.expr.free_symbols - set(names.values())
        if extra:
            raise ConfigurationError(f"unknown symbols in expression: {sorted(map(str, extra))}")
        self._cache: dict = {}

    def partial(self, n_t: int, ell: Sequence[int], alpha: Sequence[int]) -> Callable:
        key = (n_t, tuple(ell), tuple(alpha))
        if key not in self._cache:
            e = self.expr
            if n_t:
                e = sp.diff(e, self.t, n_t)
            for s, k in zip(self.x, ell):
                if k:
                    e = sp.diff(e, s, k)
            for s, k in zip(self.w, alpha):
                if k:
                    e = sp.diff(e, s, k)
            self._cache[key] = sp.lambdify((self.t,) + self.x + self.w, e, "numpy")
        return self._cache[key]

    def eval(self, n_t, ell, alpha, t, x, w) -> np.ndarray:
        """``x`` and ``w`` carry coordinates on the last axis; all inputs broadcast."""
        f = self.partial(n_t, ell, alpha)
        xs = [x[..., i] for i in range(len(self.x))]
        ws = [w[..., i] for i in range(len(self.w))]
        shape = np.broadcast_shapes(np.shape(t), *(np.shape(a) for a in xs + ws))
        out = f(t, *xs, *ws)
        return np.array(np.broadcast_to(np.asarray(out, dtype=float), shape))


def _theta_counts(theta: tuple, d: int) -> tuple[int, tuple]:
    n_t = sum(1 for a in theta if a == 0)
    return n_t, tuple(sum(1 for a in theta if a == i) for i in range(1, d + 1))


# ---------------------------------------------------------------------------
# interfaces


class PathFunctional(ABC):
    """``u(t, omega)`` with path derivatives up to weight ``order``.

    ``breakpoints`` lists fixed times where derivatives may jump; there
    ``side="left"`` and ``side="right"`` select the one-sided values.  The
    right value is the one that governs the step after ``t``.
    """

    name: str = "functional"
    d: int = 1
    order: int = DEFAULT_ORDER
    breakpoints: tuple = ()

    def check(self, theta) -> tuple:
        theta = as_theta(theta)
        if any(a < 0 or a > self.d for a in theta):
            raise QueryError(f"index {theta} has entries outside 0..{self.d}")
        if weight(theta) > self.order:
            raise CapabilityError(
                f"{self.name} supplies derivatives up to weight {self.order}, requested {theta}"
            )
        return theta

    @abstractmethod
    def derivative_at(self, theta, k, w: np.ndarray, grid: TimeGrid, side: str = "right") -> np.ndarray:
        """``D^theta u`` at node indices ``k`` for the paths ``w``."""

    def values_at(self, k, w, grid) -> np.ndarray:
        return self.derivative_at((), k, w, grid)

    def derivative_process(self, theta, w, grid, side: str = "right") -> np.ndarray:
        return self.derivative_at(theta, np.arange(grid.N + 1), w, grid, side)

    def evaluate(self, t: float, path: SamplePath) -> float:
        return float(self.values_at(path.grid.index(t), path.values, path.grid))

    def derivative(self, theta, t: float, path: SamplePath, side: str = "right") -> float:
        return float(self.derivative_at(theta, path.grid.index(t), path.values, path.grid, side))

    def hessian(self, t: float, path: SamplePath) -> np.ndarray:
        """``H[i, j] = D^{(i, j)} u``, the matrix contracted against the step-2 signature."""
        H = np.empty((self.d, self.d))
        for i in range(self.d):
            for j in range(self.d):
                H[i, j] = self.derivative((i + 1, j + 1), t, path)
        return H


class RandomField(ABC):
    """``u(t, x, omega)`` with mixed spatial and path derivatives."""

    name: str = "field"
    d: int = 1
    d_prime: int = 1
    order: int = DEFAULT_ORDER

    def check(self, theta, ell) -> tuple[tuple, tuple]:
        theta = as_theta(theta)
        ell = tuple(int(e) for e in (ell.entries if hasattr(ell, "entries") else ell))
        if len(ell) != self.d_prime:
            raise QueryError(f"spatial index {ell} does not match d'={self.d_prime}")
        if any(a < 0 or a > self.d for a in theta):
            raise QueryError(f"index {theta} has entries outside 0..{self.d}")
        if weight(theta) + sum(ell) > self.order:
            raise CapabilityError(
                f"{self.name} supplies derivatives up to weight {self.order}, requested {theta}, {ell}"
            )
        return theta, ell

    @abstractmethod
    def derivative_at(self, theta, ell, k, x, w: np.ndarray, grid: TimeGrid) -> np.ndarray:
        """``D_x^ell D^theta u`` at nodes ``k`` and points ``x`` (last axis ``d'``)."""

    def values_at(self, k, x, w, grid) -> np.ndarray:
        return self.derivative_at((), (0,) * self.d_prime, k, x, w, grid)

    def evaluate(self, t: float, x, path: SamplePath) -> float:
        return float(self.values_at(path.grid.index(t), np.asarray(x, float), path.values, path.grid))

    def derivative(self, theta, ell, t: float, x, path: SamplePath) -> float:
        return float(
            self.derivative_at(theta, ell, path.grid.index(t), np.asarray(x, float), path.values, path.grid)
        )


# ---------------------------------------------------------------------------
# Markovian entries


class MarkovianFunctional(PathFunctional):
    """``u(t, omega) = v(t, omega_t)``; every derivative is a partial of ``v``."""

    def __init__(self, expr, d: int = 1, name: str = "markovian", order: int = DEFAULT_ORDER):
        self.v = SymbolicState(expr, d)
        self.d = d
        self.name = name
        self.order = order

    def derivative_at(self, theta, k, w, grid, side="right"):
        theta = self.check(theta)
        n_t, alpha = _theta_counts(theta, self.d)
        t = np.asarray(k) * grid.dt
        return self.v.eval(n_t, (), alpha, t, np.zeros(1), _node_values(w, k))


class MarkovianField(RandomField):
    """``u(t, x, omega) = v(t, x, omega_t)``."""

    def __init__(self, expr, d: int = 1, d_prime: int = 1, name: str = "markovian-field", order: int = DEFAULT_ORDER):
        self.v = SymbolicState(expr, d, d_prime)
        self.d = d
        self.d_prime = d_prime
        self.name = name
        self.order = order

    def derivative_at(self, theta, ell, k, x, w, grid):
        theta, ell = self.check(theta, ell)
        n_t, alpha = _theta_counts(theta, self.d)
        t = np.asarray(k) * grid.dt
        return self.v.eval(n_t, ell, alpha, t, np.asarray(x, float), _node_values(w, k))


# ---------------------------------------------------------------------------
# functionals carrying a running integral


class DriftOfPath(PathFunctional):
    """``u_t = int_0^t B_s ds`` by the trapezoid rule (``d = 1``).

    Nonzero derivatives: ``()`` the integral, ``(0,)`` the path, ``(1, 0)`` one.
    """

    name = "drift"
    d = 1

    def __init__(self, order: int = DEFAULT_ORDER):
        self.order = order

    def derivative_at(self, theta, k, w, grid, side="right"):
        theta = self.check(theta)
        x = w[..., 0, :]
        if theta == ():
            full = cumulative(x, driver_increments(w, grid.dt, 0))
            return np.take(full, np.asarray(k), axis=-1)
        if theta == (0,):
            return np.take(x, np.asarray(k), axis=-1)
        shape = x.shape[:-1] + np.shape(k)
        return np.full(shape, 1.0 if theta == (1, 0) else 0.0)


class AreaFunctional(PathFunctional):
    """``u_t = int_0^t v(B^2_s) o dB^1_s`` by the midpoint rule (``d = 2``).

    With the default ``v(y) = y`` this is the area-type functional whose
    second path derivatives are ``D^{(2,1)} u = 1`` and ``D^{(1,2)} u = 0``.
    A word ending in 1 whose other entries are all 2 gives ``v^{(n-1)}(B^2)``;
    every other nonempty word gives 0.
    """

    d = 2

    def __init__(self, integrand: str = "y", name: str = "area", order: int = DEFAULT_ORDER):
        y = sp.Symbol("y")
        self.v = sp.sympify(integrand, locals={"y": y})
        self._y = y
        self._cache: dict[int, Callable] = {}
        self.name = name
        self.order = order

    def _v(self, n: int, y: np.ndarray) -> np.ndarray:
        if n not in self._cache:
            self._cache[n] = sp.lambdify(self._y, sp.diff(self.v, self._y, n), "numpy")
        return np.array(np.broadcast_to(np.asarray(self._cache[n](y), float), np.shape(y)))

    def derivative_at(self, theta, k, w, grid, side="right"):
        theta = self.check(theta)
        k = np.asarray(k)
        y = w[..., 1, :]
        if theta == ():
            full = cumulative(self._v(0, y), driver_increments(w, grid.dt, 1))
            return np.take(full, k, axis=-1)
        if theta[-1] == 1 and all(a == 2 for a in theta[:-1]):
            return self._v(len(theta) - 1, np.take(y, k, axis=-1))
        return np.zeros(y.shape[:-1] + k.shape)


class CylindricalFunctional(PathFunctional):
    """``u(t, omega) = v(omega_{t_1 ^ t}, ..., omega_{t_n ^ t})``.

    ``v`` is an expression in ``y{j}_{i}`` (time ``j``, coordinate ``i``, both
    one-based).  Between fixed times it is Markovian in the current value with
    frozen parameters: the path derivative in coordinate ``i`` is the sum of
    ``d/dy{j}_{i}`` over the still-active times ``t_j``.  Time entries give 0.
    """

    def __init__(self, expr, times: Sequence[float], d: int = 2, name: str = "cylindrical", order: int = DEFAULT_ORDER):
        self.times = tuple(float(s) for s in times)
        if list(self.times) != sorted(self.times) or not self.times:
            raise ConfigurationError("fixed times must be a non-empty increasing sequence")
        self.d = d
        self.name = name
        self.order = order
        self.breakpoints = self.times
        self.y = [[sp.Symbol(f"y{j + 1}_{i + 1}") for i in range(d)] for j in range(len(self.times))]
        names = {s.name: s for row in self.y for s in row}
        self.expr = sp.sympify(expr, locals=names)
        self._cache: dict = {}

    def _lambda(self, theta: tuple, active: tuple):
        key = (theta, active)
        if key not in self._cache:
            e = self.expr
            for a in reversed(theta):
                e = sum((sp.diff(e, self.y[j][a - 1]) for j in active), sp.Integer(0))
            flat = [s for row in self.y for s in row]
            self._cache[key] = sp.lambdify(flat, e, "numpy")
        return self._cache[key]

    def derivative_at(self, theta, k, w, grid, side="right"):
        theta = self.check(theta)
        k = np.asarray(k)
        kj = [grid.index(s) if s <= grid.T else grid.N + 1 for s in self.times]
        args = []
        for j in range(len(self.times)):
            vals = _node_values(w, np.minimum(k, min(kj[j], grid.N)))
            args.extend(vals[..., i] for i in range(self.d))
        shape = w.shape[:-2] + k.shape
        if theta == ():
            return np.array(np.broadcast_to(np.asarray(self._lambda((), ())(*args), float), shape))
        if 0 in theta:
            return np.zeros(shape)
        out = np.zeros(shape)
        n = len(self.times)
        # active times: t_j > t on the right side, t_j >= t on the left side
        first = np.searchsorted(np.asarray(kj), k, side="right" if side == "right" else "left")
        first = np.broadcast_to(first, shape)
        for f in range(n):
            mask = first == f
            if np.any(mask):
                val = np.broadcast_to(np.asarray(self._lambda(theta, tuple(range(f, n)))(*args), float), shape)
                out = np.where(mask, val, out)
        return out


# ---------------------------------------------------------------------------
# derived functionals


class FrozenField(PathFunctional):
    """``t -> u(t, x, omega)`` at a fixed point ``x``."""

    def __init__(self, field: RandomField, x):
        self.field = field
        self.x = np.asarray(x, dtype=float).reshape(field.d_prime)
        self.d = field.d
        self.order = field.order
        self.name = f"{field.name}@x"

    def derivative_at(self, theta, k, w, grid, side="right"):
        theta = self.check(theta)
        return self.field.derivative_at(theta, (0,) * self.field.d_prime, k, self.x, w, grid)


class DerivativeFunctional(PathFunctional):
    """``D^theta u`` as a functional in its own right: ``D^a (D^theta u) = D^{a + theta} u``."""

    def __init__(self, base: PathFunctional, theta):
        self.base = base
        self.theta = base.check(theta)
        self.d = base.d
        self.order = base.order - weight(self.theta)
        self.breakpoints = base.breakpoints
        self.name = f"D{self.theta}{base.name}"

    def derivative_at(self, theta, k, w, grid, side="right"):
        theta = self.check(theta)
        return self.base.derivative_at(theta + self.theta, k, w, grid, side)


class SpatialDerivativeField(RandomField):
    """``d u / d x_i`` as a random field (zero-based ``i``)."""

    def __init__(self, base: RandomField, i: int):
        self.base = base
        self.i = i
        self.d = base.d
        self.d_prime = base.d_prime
        self.order = base.order - 1
        self.name = f"dx{i + 1}{base.name}"

    def derivative_at(self, theta, ell, k, x, w, grid):
        theta, ell = self.check(theta, ell)
        ell = tuple(e + (1 if j == self.i else 0) for j, e in enumerate(ell))
        return self.base.derivative_at(theta, ell, k, x, w, grid)


class ConstantFunctional(PathFunctional):
    def __init__(self, value: float = 0.0, d: int = 1):
        self.value = float(value)
        self.d = d
        self.name = f"constant:{value:g}"

    def derivative_at(self, theta, k, w, grid, side="right"):
        theta = self.check(theta)
        shape = w.shape[:-2] + np.shape(k)
        return np.full(shape, self.value if theta == () else 0.0)


# ---------------------------------------------------------------------------
# catalog

_MARKOVIAN = {
    "markovian:identity": ("w1", 1),
    "markovian:square": ("w1**2", 1),
    "markovian:cubic": ("w1**3", 1),
    "markovian:sin": ("sin(w1)", 1),
    "markovian:expsin": ("exp(t/2)*sin(w1)", 1),
    "markovian:sin2": ("sin(w1)*cos(w2) + w1*w2", 2),
}

_FIELDS = {
    "transport:identity": ("x1 + w1", 1),
    "transport:square": ("(x1 + w1)**2", 1),
    "transport:cubic": ("(x1 + w1)**3", 1),
    "transport:sin": ("sin(x1 + w1)", 1),
    "transport:gauss": ("exp(-(x1 + w1)**2/2)", 1),
    "multiplicative": ("sin(x1)*exp(w1)", 1),
    "heat-deterministic": ("exp(-t/2)*sin(x1)", 1),
    "field:quadratic": ("w1*x1**2 + t*x1 + w1**2", 1),
    "field:sin2": ("sin(x1 + w1)*cos(w2) + x1*w2", 2),
}

FUNCTIONAL_NAMES = tuple(_MARKOVIAN) + ("drift", "area", "area:sin", "cylindrical")
FIELD_NAMES = tuple(_FIELDS)


def get_functional(name: str, order: int = DEFAULT_ORDER) -> PathFunctional:
    """Catalog path functional by name."""
    if name in _MARKOVIAN:
        expr, d = _MARKOVIAN[name]
        return MarkovianFunctional(expr, d, name=name, order=order)
    if name == "drift":
        return DriftOfPath(order)
    if name == "area":
        return AreaFunctional("y", name="area", order=order)
    if name == "area:sin":
        return AreaFunctional("sin(y)", name="area:sin", order=order)
    if name == "cylindrical":
        return CylindricalFunctional(
            "sin(y1_1)*cos(y2_2) + y1_1*y2_2 + y2_1**2/2", times=(0.5, 1.0), d=2, name=name, order=order
        )
    if name in _FIELDS:
        return FrozenField(get_field(name, order), [0.3])
    raise ConfigurationError(f"unknown functional {name!r}")


def get_field(name: str, order: int = DEFAULT_ORDER) -> RandomField:
    """Catalog random field by name."""
    if name not in _FIELDS:
        raise ConfigurationError(f"unknown field {name!r}")
    expr, d = _FIELDS[name]
    return MarkovianField(expr, d=d, d_prime=1, name=name, order=order)


def is_field(name: str) -> bool:
    return name in _FIELDS


# ---------------------------------------------------------------------------
# reconstruction residuals


def _two_sided_integral(u: PathFunctional, theta, i: int, w, grid, ks: int, kt: int) -> np.ndarray:
    idx = np.arange(ks, kt + 1)
    right = u.derivative_at(theta, idx, w, grid, side="right")
    left = u.derivative_at(theta, idx, w, grid, side="left") if u.breakpoints else right
    dx = driver_increments(w, grid.dt, i, ks, kt)
    return np.sum(0.5 * (right[..., :-1] + left[..., 1:]) * dx, axis=-1)


def ito_residual_values(u: PathFunctional, w: np.ndarray, grid: TimeGrid, kt: int) -> np.ndarray:
    """Batch version of ``functional_ito_residual`` over ``[0, t_kt]``."""
    total = u.values_at(kt, w, grid) - u.values_at(0, w, grid)
    total = total - _two_sided_integral(u, (0,), 0, w, grid, 0, kt)
    for i in range(1, u.d + 1):
        total = total - _two_sided_integral(u, (i,), i, w, grid, 0, kt)
    return total


def functional_ito_residual(u: PathFunctional, path: SamplePath, T: float) -> float:
    """``u_T - u_0 - int dt-part - sum_i int d_{omega^i} u o dB^i`` on the grid."""
    if u.order < 2:
        raise CapabilityError("the time derivative has weight 2")
    if u.d != path.d:
        raise QueryError(f"functional has d={u.d}, path has d={path.d}")
    return float(ito_residual_values(u, path.values, path.grid, path.grid.index(T)))


def _composite(u: RandomField, X: Sequence[PathFunctional], k: int, w, grid) -> np.ndarray:
    x = np.stack([Xi.values_at(k, w, grid) for Xi in X], axis=-1)
    return u.values_at(k, x, w, grid)


def chain_rule_residual(
    u: RandomField, X: Sequence[PathFunctional], path: SamplePath, t: float, eps: float = 1e-5
) -> tuple[float, np.ndarray]:
    """Residuals of the time and path chain rules for ``Y_t = u(t, X_t, omega)``.

    The composite's derivatives are finite differences of its values: the
    time derivative is a one-step forward difference along the path frozen
    after ``t``; the path derivative in coordinate ``i`` is a central
    difference under the bump ``omega + eps * 1_{[t, T]} e_i``.

    Returns
    -------
    (float, ndarray)
        Time residual and the ``d`` path residuals.
    """
    X = list(X)
    if len(X) != u.d_prime or any(Xi.d != u.d for Xi in X) or path.d != u.d:
        raise QueryError("dimensions of field, composite argument and path disagree")
    return chain_rule_values(u, X, path.values, path.grid, path.grid.index(t), eps)


def chain_rule_values(u, X, w, grid, k: int, eps: float = 1e-5):
    """Batch version of ``chain_rule_residual`` at node ``k``."""
    if k >= grid.N:
        raise QueryError("the time difference needs a node after t")
    x = np.stack([Xi.values_at(k, w, grid) for Xi in X], axis=-1)
    zero = (0,) * u.d_prime
    units = [tuple(1 if j == i else 0 for j in range(u.d_prime)) for i in range(u.d_prime)]

    frozen = np.array(w, copy=True)
    frozen[..., k + 1 :] = frozen[..., k : k + 1]
    dYdt = (_composite(u, X, k + 1, frozen, grid) - _composite(u, X, k, w, grid)) / grid.dt
    ux = [u.derivative_at((), e, k, x, w, grid) for e in units]
    rhs_t = u.derivative_at((0,), zero, k, x, w, grid)
    for i, Xi in enumerate(X):
        rhs_t = rhs_t + ux[i] * Xi.derivative_at((0,), k, w, grid)
    res_t = dYdt - rhs_t

    res_w = []
    for a in range(1, u.d + 1):
        up = np.array(w, copy=True)
        dn = np.array(w, copy=True)
        up[..., a - 1, k:] += eps
        dn[..., a - 1, k:] -= eps
        dYdw = (_composite(u, X, k, up, grid) - _composite(u, X, k, dn, grid)) / (2 * eps)
        rhs = u.derivative_at((a,), zero, k, x, w, grid)
        for i, Xi in enumerate(X):
            rhs = rhs + ux[i] * Xi.derivative_at((a,), k, w, grid)
        res_w.append(dYdw - rhs)
    res_w = np.stack(res_w, axis=-1)
    if res_w.ndim == 1:
        return float(res_t), res_w
    return res_t, res_w
