"""Forward and backward pathwise Taylor expansions and their remainders.

For a functional ``u`` the order-``m`` prediction of ``u(t + delta)`` is

    sum_{weight(theta) <= m} D^theta u(t) * I^theta_{t, t+delta}

with signed iterated integrals, so the same formula covers ``delta < 0``.
Random fields add spatial offsets ``h`` with factors ``h^ell / ell!``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .brownian import SamplePath, TimeGrid
from .errors import CapabilityError, ConfigurationError, QueryError
from .functionals import DerivativeFunctional, PathFunctional, RandomField, SpatialDerivativeField
from .indices import enumerate_indices, ell_factorial, temporal_indices, weight
from .integrals import IteratedTable, cumulative, driver_increments, layered, midpoint_sum, signed_values

MIN_STEPS = 10
MAX_ORDER = 4
VARIANTS = ("full", "symmetric")


@dataclass(frozen=True)
class ExpansionQuery:
    """Base time ``t``, signed offset ``delta``, order ``m``; ``x`` and ``h`` for fields."""

    t: float
    delta: float
    m: int
    x: tuple | None = None
    h: tuple | None = None

    def resolve(self, grid: TimeGrid, min_steps: int = MIN_STEPS) -> tuple[int, int]:
        """Node index of ``t`` (snapped) and the signed step count of ``delta``."""
        if int(self.m) != self.m or self.m < 0:
            raise ConfigurationError(f"order must be a non-negative integer, got m={self.m}")
        if self.t < 0:
            raise QueryError(f"base time must be >= 0, got t={self.t}")
        k = grid.snap(self.t)
        L = grid.steps(self.delta)
        if L == 0:
            raise QueryError("offset must be nonzero")
        if not 0 <= k + L <= grid.N:
            raise QueryError(f"t + delta = {self.t + self.delta} leaves [0, {grid.T}]")
        if abs(L) < min_steps:
            raise QueryError(f"|delta| must be at least {min_steps} steps, got {abs(L)}")
        return k, L


@dataclass(frozen=True)
class Term:
    coefficient: float
    integral: float
    monomial: float = 1.0

    @property
    def value(self) -> float:
        return self.coefficient * self.integral * self.monomial


@dataclass
class ExpansionResult:
    query: ExpansionQuery
    terms: dict = field(default_factory=dict)
    predicted: float = 0.0
    actual: float = 0.0
    remainder: float = 0.0

    def rows(self) -> list[dict]:
        return [
            {
                "index": str(idx),
                "weight": idx.weight,
                "coefficient": term.coefficient,
                "integral": term.integral,
                "monomial": term.monomial,
                "contribution": term.value,
            }
            for idx, term in self.terms.items()
        ]


def _check_order(m: int, order: int, max_order: int, name: str):
    if m > max_order:
        raise CapabilityError(f"order {m} exceeds the configured cap {max_order}")
    if m > order:
        raise CapabilityError(f"{name} supplies derivatives up to weight {order}, asked for m={m}")


def _finish(q, terms) -> ExpansionResult:
    return ExpansionResult(q, terms)


def expand(
    u: PathFunctional,
    path: SamplePath,
    q: ExpansionQuery,
    variant: str = "full",
    max_order: int = MAX_ORDER,
    min_steps: int = MIN_STEPS,
) -> ExpansionResult:
    """Order-``m`` expansion of ``u`` from ``t`` to ``t + delta``.

    ``variant="symmetric"`` (``m = 2`` only) replaces each two-letter path
    integral by its symmetric part ``B^i B^j / 2``, which drops the Levy-area
    correction.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    if u.d != path.d:
        raise QueryError(f"functional has d={u.d}, path has d={path.d}")
    k, L = q.resolve(path.grid, min_steps)
    _check_order(q.m, u.order, max_order, u.name)
    if variant == "symmetric" and q.m != 2:
        raise ConfigurationError("the symmetrized expansion is defined for m = 2 only")
    w, dt = path.values, path.grid.dt
    side = "right" if L > 0 else "left"
    incr = w[:, k + L] - w[:, k]
    terms = {}
    predicted = 0.0
    for idx in enumerate_indices(q.m, u.d, 0):
        th = idx.theta.entries
        coef = float(u.derivative_at(th, k, w, path.grid, side))
        if variant == "symmetric" and len(th) == 2 and 0 not in th:
            integ = 0.5 * incr[th[0] - 1] * incr[th[1] - 1]
        else:
            integ = float(signed_values(th, w, dt, k, k + L))
        term = Term(coef, integ)
        terms[idx] = term
        predicted += term.value
    actual = float(u.values_at(k + L, w, path.grid))
    return ExpansionResult(q, terms, predicted, actual, actual - predicted)


def signed_step2(path: SamplePath, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    """Increment and second-level matrix between node indices ``a`` and ``b``.

    For ``a > b`` the orientation convention gives ``-B_{b,a}`` and the
    transpose of the forward second-level matrix.
    """
    w, dt = path.values, path.grid.dt
    d = path.d
    S = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            S[i, j] = signed_values((i + 1, j + 1), w, dt, a, b)
    return w[:, b] - w[:, a], S


def second_order_forms(u: PathFunctional, path: SamplePath, q: ExpansionQuery, min_steps: int = MIN_STEPS) -> dict:
    """Matrix forms of the second-order expansion.

    Returns the predictions ``signature`` (value + time + gradient.B + H:S),
    ``levy`` (value + time + gradient.B + H:BB^T/2 + H:A/2) and ``symmetric``
    (the same without the area term), plus the ``hessian`` ``H[i, j] =
    D^{(i,j)} u`` and the ``area`` matrix ``A = S - S^T``.
    """
    k, L = q.resolve(path.grid, min_steps)
    side = "right" if L > 0 else "left"
    w, grid = path.values, path.grid
    B, S = signed_step2(path, k, k + L)
    A = S - S.T
    d = u.d
    base = float(u.values_at(k, w, grid))
    dtu = float(u.derivative_at((0,), k, w, grid, side))
    grad = np.array([float(u.derivative_at((i,), k, w, grid, side)) for i in range(1, d + 1)])
    H = np.array(
        [[float(u.derivative_at((i, j), k, w, grid, side)) for j in range(1, d + 1)] for i in range(1, d + 1)]
    )
    delta = L * grid.dt
    first = base + dtu * delta + grad @ B
    sym = first + 0.5 * np.sum(H * np.outer(B, B))
    return {
        "signature": first + np.sum(H * S),
        "levy": sym + 0.5 * np.sum(H * A),
        "symmetric": sym,
        "hessian": H,
        "area": A,
    }


# ---------------------------------------------------------------------------
# random fields


def _field_point(u: RandomField, v, name: str) -> np.ndarray:
    if v is None:
        raise QueryError(f"field queries need {name}")
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.shape != (u.d_prime,):
        raise QueryError(f"{name} must have dimension {u.d_prime}")
    return arr


def expand_field(
    u: RandomField,
    path: SamplePath,
    q: ExpansionQuery,
    max_order: int = MAX_ORDER,
    min_steps: int = MIN_STEPS,
) -> ExpansionResult:
    """Order-``m`` expansion of ``u(t + delta, x + h)`` around ``(t, x)``."""
    if u.d != path.d:
        raise QueryError(f"field has d={u.d}, path has d={path.d}")
    k, L = q.resolve(path.grid, min_steps)
    _check_order(q.m, u.order, max_order, u.name)
    x = _field_point(u, q.x, "x")
    h = _field_point(u, q.h, "h")
    w, dt = path.values, path.grid.dt
    integrals: dict[tuple, float] = {}
    terms = {}
    predicted = 0.0
    for idx in enumerate_indices(q.m, u.d, u.d_prime):
        th, ell = idx.theta.entries, idx.ell.entries
        if th not in integrals:
            integrals[th] = float(signed_values(th, w, dt, k, k + L))
        coef = float(u.derivative_at(th, ell, k, x, w, path.grid))
        mono = float(np.prod(h ** np.asarray(ell))) / ell_factorial(ell)
        term = Term(coef, integrals[th], mono)
        terms[idx] = term
        predicted += term.value
    actual = float(u.values_at(k + L, x + h, w, path.grid))
    return ExpansionResult(q, terms, predicted, actual, actual - predicted)


SEVEN_TERMS = ("value", "time", "space", "path", "space-space", "space-path", "path-path")


def field_second_order_terms(u: RandomField, path: SamplePath, q: ExpansionQuery, min_steps: int = MIN_STEPS) -> dict:
    """Seven-term second-order field expansion in matrix form.

    value + dt_u delta + grad_x u . h + grad_w u . B + 1/2 D_xx u : h h^T
    + D_xw u : h B^T + H : S, with ``D_xw u`` of shape ``(d', d)``.
    """
    if q.m != 2:
        raise ConfigurationError("the seven-term form is the m = 2 expansion")
    k, L = q.resolve(path.grid, min_steps)
    _check_order(2, u.order, MAX_ORDER, u.name)
    x = _field_point(u, q.x, "x")
    h = _field_point(u, q.h, "h")
    w, grid = path.values, path.grid
    d, dp = u.d, u.d_prime
    B, S = signed_step2(path, k, k + L)
    zero = (0,) * dp

    def e(*ii):
        return tuple(sum(1 for i in ii if i == j) for j in range(dp))

    def D(th, ell):
        return float(u.derivative_at(th, ell, k, x, w, grid))

    grad_x = np.array([D((), e(i)) for i in range(dp)])
    grad_w = np.array([D((a,), zero) for a in range(1, d + 1)])
    Dxx = np.array([[D((), e(i, j)) for j in range(dp)] for i in range(dp)])
    Dxw = np.array([[D((a,), e(i)) for a in range(1, d + 1)] for i in range(dp)])
    H = np.array([[D((a, b), zero) for b in range(1, d + 1)] for a in range(1, d + 1)])
    parts = {
        "value": D((), zero),
        "time": D((0,), zero) * L * grid.dt,
        "space": float(grad_x @ h),
        "path": float(grad_w @ B),
        "space-space": 0.5 * float(np.sum(Dxx * np.outer(h, h))),
        "space-path": float(np.sum(Dxw * np.outer(h, B))),
        "path-path": float(np.sum(H * S)),
    }
    parts["predicted"] = sum(parts[name] for name in SEVEN_TERMS)
    return parts


def group_terms(result: ExpansionResult) -> dict:
    """Sum an order-2 field expansion's terms into the seven matrix-form groups."""
    out = dict.fromkeys(SEVEN_TERMS, 0.0)
    for idx, term in result.terms.items():
        th, n_ell = idx.theta.entries, idx.ell.order
        if th == () and n_ell == 0:
            key = "value"
        elif th == (0,):
            key = "time"
        elif th == ():
            key = "space" if n_ell == 1 else "space-space"
        elif len(th) == 1:
            key = "path" if n_ell == 0 else "space-path"
        else:
            key = "path-path"
        out[key] += term.value
    return out


# ---------------------------------------------------------------------------
# remainder representations


def _process(u: PathFunctional, theta, w, grid, a: int, b: int) -> np.ndarray:
    return u.derivative_at(theta, np.arange(a, b + 1), w, grid)


def _forward_remainder_process(u: PathFunctional, n: int, w, grid, a: int, b: int) -> np.ndarray:
    """``r -> R_n(u, t_a, t_r - t_a)`` for nodes ``r = a..b`` (definitional, forward)."""
    out = _process(u, (), w, grid, a, b)
    for th in temporal_indices(n, u.d):
        coef = u.derivative_at(th, a, w, grid)[..., None]
        out = out - coef * layered(th, 1.0, w, grid.dt, a, b)
    return out


def _representation_full(u: PathFunctional, m: int, w, grid, k: int, L: int) -> float:
    dt = grid.dt
    words = temporal_indices(m + 1, u.d)
    top = [th for th in words if weight(th) == m + 1]
    mid = [th for th in words if weight(th) == m]
    if L > 0:
        a, b = k, k + L
        total = 0.0
        for th in top:
            total += layered(th, _process(u, th, w, grid, a, b), w, dt, a, b)[..., -1]
        for th in mid:
            drift = cumulative(_process(u, (0,) + th, w, grid, a, b), driver_increments(w, dt, 0, a, b))
            total += layered(th, drift, w, dt, a, b)[..., -1]
        return total
    a, b = k + L, k
    total = 0.0
    for th in top:
        sign = (-1) ** len(th)
        inner = layered(th[1:][::-1], 1.0, w, dt, a, b)
        integrand = _process(u, th, w, grid, a, b) * inner
        total += sign * midpoint_sum(integrand, driver_increments(w, dt, th[0], a, b))
    for th in mid:
        sign = (-1) ** len(th)
        inner = layered(th[::-1], 1.0, w, dt, a, b)
        integrand = _process(u, (0,) + th, w, grid, a, b) * inner
        total -= sign * midpoint_sum(integrand, driver_increments(w, dt, 0, a, b))
    return total


def _representation_hoelder(u: PathFunctional, m: int, w, grid, k: int, L: int) -> float:
    dt = grid.dt
    if L > 0:
        a, b = k, k + L
        table = IteratedTable(w[..., : b + 1], dt)
        s_idx = np.arange(a, b + 1)
        total = 0.0
        for th in temporal_indices(m, u.d, nonzero=True):
            wt = weight(th)
            if wt <= m - 2:
                sub = DerivativeFunctional(u, (0,) + th)
                rem = _forward_remainder_process(sub, m - 2 - wt, w, grid, a, b)
                tail = table.value(th, s_idx, b)
                total += midpoint_sum(rem * tail, driver_increments(w, dt, 0, a, b))
            elif wt == m - 1:
                tail = table.value(th, s_idx, b)
                integrand = _process(u, (0,) + th, w, grid, a, b) * tail
                total += midpoint_sum(integrand, driver_increments(w, dt, 0, a, b))
            if wt == m:
                phi = _process(u, th, w, grid, a, b)
                total += layered(th, phi - phi[..., :1], w, dt, a, b)[..., -1]
        return total
    a, b = k + L, k
    total = 0.0
    for th in temporal_indices(m, u.d):
        sub = DerivativeFunctional(u, th) if th else u
        rem = _forward_remainder_process(sub, m - weight(th), w, grid, a, b)[..., -1]
        sign = (-1) ** len(th)
        total -= sign * rem * layered(th[::-1], 1.0, w, dt, a, b)[..., -1]
    return total


def remainder_via_representation(
    u: PathFunctional,
    path: SamplePath,
    q: ExpansionQuery,
    variant: str = "full",
    min_steps: int = MIN_STEPS,
) -> float:
    """Remainder of ``expand`` computed from an integral representation.

    ``full`` integrates the top-weight derivatives (and the time derivatives
    of the weight-``m`` ones) against iterated integrals; it needs weight
    ``m + 2``.  ``hoelder`` uses lower-order remainders of time derivatives
    (forward) or of every derivative from the left end point (backward); it
    needs weight ``m + 1``.
    """
    k, L = q.resolve(path.grid, min_steps)
    if u.d != path.d:
        raise QueryError(f"functional has d={u.d}, path has d={path.d}")
    if variant == "full":
        if u.order < q.m + 2:
            raise CapabilityError(f"the full representation needs weight {q.m + 2}, {u.name} has {u.order}")
        return float(_representation_full(u, q.m, path.values, path.grid, k, L))
    if variant == "hoelder":
        if u.order < q.m + 1:
            raise CapabilityError(f"the Hoelder representation needs weight {q.m + 1}, {u.name} has {u.order}")
        return float(_representation_hoelder(u, q.m, path.values, path.grid, k, L))
    raise ConfigurationError(f"unknown representation {variant!r}")


def representation_values(u: PathFunctional, w: np.ndarray, grid: TimeGrid, k: int, L: int, m: int, variant: str = "full"):
    """Batch version of ``remainder_via_representation`` (no query validation)."""
    if variant == "full":
        return _representation_full(u, m, w, grid, k, L)
    return _representation_hoelder(u, m, w, grid, k, L)


def definitional_values(u: PathFunctional, w: np.ndarray, grid: TimeGrid, k: int, L: int, m: int) -> np.ndarray:
    """Batch definitional remainder between nodes ``k`` and ``k + L``."""
    side = "right" if L > 0 else "left"
    pred = 0.0
    for th in temporal_indices(m, u.d):
        pred = pred + u.derivative_at(th, k, w, grid, side) * signed_values(th, w, grid.dt, k, k + L)
    return u.values_at(k + L, w, grid) - pred


def field_remainder_recursion_residual(
    u: RandomField, path: SamplePath, q: ExpansionQuery, quad_order: int = 8, min_steps: int = MIN_STEPS
) -> float:
    """``R_m(h) - R_m(0) - sum_i h_i int_0^1 R_{m-1}(d_{x_i} u; h^i(kappa)) dkappa``.

    ``h^i(kappa)`` keeps the first ``i - 1`` components of ``h``, scales the
    ``i``-th by ``kappa`` and zeroes the rest; the kappa-integral is
    Gauss-Legendre of order ``quad_order``.
    """
    if q.m < 1:
        raise QueryError("the recursion needs m >= 1")
    h = _field_point(u, q.h, "h")
    full = expand_field(u, path, q, min_steps=min_steps).remainder
    base = ExpansionQuery(q.t, q.delta, q.m, q.x, tuple(np.zeros_like(h)))
    total = full - expand_field(u, path, base, min_steps=min_steps).remainder
    nodes, weights = np.polynomial.legendre.leggauss(quad_order)
    kappas = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    for i in range(u.d_prime):
        if h[i] == 0.0:
            continue
        du = SpatialDerivativeField(u, i)
        acc = 0.0
        for kap, wt in zip(kappas, weights):
            hk = np.where(np.arange(u.d_prime) < i, h, 0.0)
            hk[i] = kap * h[i]
            sub = ExpansionQuery(q.t, q.delta, q.m - 1, q.x, tuple(hk))
            acc += wt * expand_field(du, path, sub, min_steps=min_steps).remainder
        total -= h[i] * acc
    return float(total)


# ---------------------------------------------------------------------------
# batch scans for the experiment harness


def remainder_scan(
    u: PathFunctional,
    w: np.ndarray,
    grid: TimeGrid,
    base,
    steps,
    m_max: int,
    variant: str = "full",
    table: IteratedTable | None = None,
) -> dict:
    """Remainders ``R_m`` for every path, base node and signed step count.

    Returns ``{m: array (..., len(base), len(steps))}`` for ``m <= m_max``;
    pairs leaving the grid are ``nan``.
    """
    base = np.asarray(base)[:, None]
    steps = np.asarray(steps)[None, :]
    target = base + steps
    valid = (target >= 0) & (target <= grid.N)
    tgt = np.clip(target, 0, grid.N)
    table = table if table is not None else IteratedTable(w, grid.dt)
    actual = u.values_at(tgt, w, grid)
    forward = steps > 0
    incr = np.take(w, tgt, axis=-1) - np.take(w, np.broadcast_to(base, tgt.shape), axis=-1)
    pred = np.zeros_like(actual)
    out = {}
    words = temporal_indices(m_max, u.d)
    for level in range(m_max + 1):
        for th in (t for t in words if weight(t) == level):
            right = u.derivative_at(th, base[:, 0], w, grid, "right")[..., None]
            left = u.derivative_at(th, base[:, 0], w, grid, "left")[..., None] if u.breakpoints else right
            coef = np.where(forward, right, left)
            if variant == "symmetric" and len(th) == 2 and 0 not in th:
                integ = 0.5 * incr[..., th[0] - 1, :, :] * incr[..., th[1] - 1, :, :]
            else:
                integ = table.signed(th, np.broadcast_to(base, tgt.shape), tgt)
            pred = pred + coef * integ
        out[level] = np.where(valid, actual - pred, np.nan)
    return out


def field_remainder_scan(
    u: RandomField,
    w: np.ndarray,
    grid: TimeGrid,
    base,
    steps,
    xs: np.ndarray,
    hs: np.ndarray,
    m: int,
    table: IteratedTable | None = None,
) -> np.ndarray:
    """Field remainders on a ``(base, step, x, h)`` grid.

    Parameters
    ----------
    xs : ndarray, shape (nx, d')
    hs : ndarray, shape (n_steps, nh, d')
        Spatial offsets paired with each step.

    Returns
    -------
    ndarray, shape (..., n_base, n_steps, nx, nh)
    """
    base = np.asarray(base)
    steps = np.asarray(steps)
    nb = base.size
    target = base[:, None] + steps[None, :]
    valid = (target >= 0) & (target <= grid.N)
    tgt = np.clip(target, 0, grid.N)
    table = table if table is not None else IteratedTable(w, grid.dt)
    xs = np.asarray(xs, dtype=float)
    hs = np.asarray(hs, dtype=float)
    points = xs[None, :, None, :] + hs[:, None, :, :]
    actual = u.values_at(tgt[:, :, None, None], points, w, grid)
    kb = base.reshape(nb, 1, 1, 1)
    xb = xs[:, None, :]
    pred = np.zeros_like(actual)
    integrals: dict[tuple, np.ndarray] = {}
    for idx in enumerate_indices(m, u.d, u.d_prime):
        th, ell = idx.theta.entries, idx.ell.entries
        if th not in integrals:
            integrals[th] = table.signed(th, np.broadcast_to(base[:, None], tgt.shape), tgt)[..., None, None]
        coef = u.derivative_at(th, ell, kb, xb, w, grid)
        mono = (np.prod(hs ** np.asarray(ell), axis=-1) / ell_factorial(ell))[:, None, :]
        pred = pred + coef * integrals[th] * mono
    return np.where(valid[:, :, None, None], actual - pred, np.nan)
