"""Second-order expansion coefficients of solutions to Stratonovich SPDEs

    du = f(t, x, u, D_x u, D_xx u) dt + g(t, x, u, D_x u) o dB_t

computed from the coefficients and the spatial jet ``(u, D_x u, D_xx u)`` of
a known solution, and compared with the solution's own path derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from .brownian import SamplePath
from .errors import CapabilityError, ConfigurationError, ConsistencyError, QueryError
from .functionals import RandomField, get_field
from .indices import ell_factorial, enumerate_indices
from .integrals import signed_values
from .taylor import ExpansionQuery, ExpansionResult, MIN_STEPS, Term

REL_TOL = 1e-10


def rel_err(a, b) -> float:
    """Largest componentwise ``|a - b| / max(1, |b|)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)), initial=0.0))


@dataclass
class SpdeCoefficients:
    """Drift ``f`` and diffusion ``g`` with their partial derivatives.

    All callables take ``(t, x, y, z, gamma)`` (``g`` and its partials ignore
    ``gamma``) with ``x, z`` of length ``d'`` and ``gamma`` of shape
    ``(d', d')``.  Shapes: ``g -> (d,)``, ``g_x -> (d', d)``, ``g_y -> (d,)``,
    ``g_z -> (d', d)``, ``g_omega -> (d, d)``, ``f_gamma -> (d', d')``.
    A missing closure is ``None``.
    """

    d: int
    d_prime: int
    f: Callable
    g: Callable
    f_y: Callable | None = None
    f_z: Callable | None = None
    f_gamma: Callable | None = None
    g_x: Callable | None = None
    g_y: Callable | None = None
    g_z: Callable | None = None
    g_omega: Callable | None = None
    deterministic: bool = True

    def need(self, name: str) -> Callable:
        fn = getattr(self, name)
        if fn is None:
            raise CapabilityError(f"coefficient closure {name} is not available")
        return fn

    def ito_drift(self, t, x, y, z, gamma) -> float:
        """``f + 1/2 tr(g_omega + g g_y^T + (g_x + z g_y^T + gamma g_z)^T g_z)``."""
        g = np.asarray(self.g(t, x, y, z, gamma), float)
        gy = np.asarray(self.need("g_y")(t, x, y, z, gamma), float)
        gz = np.asarray(self.need("g_z")(t, x, y, z, gamma), float)
        gx = np.asarray(self.need("g_x")(t, x, y, z, gamma), float)
        gw = self._g_omega(t, x, y, z, gamma)
        inner = gx + np.outer(z, gy) + gamma @ gz
        return float(np.ravel(self.f(t, x, y, z, gamma))[0] + 0.5 * np.trace(gw + np.outer(g, gy) + inner.T @ gz))

    def _g_omega(self, t, x, y, z, gamma) -> np.ndarray:
        if self.g_omega is None:
            return np.zeros((self.d, self.d))
        return np.asarray(self.g_omega(t, x, y, z, gamma), float)

    @classmethod
    def from_expressions(cls, f: str, g: Sequence[str], d: int = 1, d_prime: int = 1) -> "SpdeCoefficients":
        """Build all closures by symbolic differentiation.

        Symbols: ``t``, ``x1..``, ``y``, ``z1..`` and ``gam{i}{j}`` (one-based).
        """
        t = sp.Symbol("t")
        xs = sp.symbols(f"x1:{d_prime + 1}")
        y = sp.Symbol("y")
        zs = sp.symbols(f"z1:{d_prime + 1}")
        gam = sp.Matrix(d_prime, d_prime, lambda i, j: sp.Symbol(f"gam{i + 1}{j + 1}"))
        names = {s.name: s for s in (t, y, *xs, *zs, *gam)}
        fe = sp.sympify(f, locals=names)
        ge = [sp.sympify(e, locals=names) for e in g]
        if len(ge) != d:
            raise ConfigurationError(f"g needs {d} components, got {len(ge)}")
        if any(ex.has(*gam) for ex in ge):
            raise ConfigurationError("g must not depend on the second spatial derivative")
        args = (t, xs, y, zs, gam)

        def lam(expr):
            fn = sp.lambdify(args, expr, "numpy")

            def call(t_, x_, y_, z_, gam_=None):
                x_ = np.atleast_1d(np.asarray(x_, float))
                z_ = np.atleast_1d(np.asarray(z_, float))
                G = np.zeros((d_prime, d_prime)) if gam_ is None else np.asarray(gam_, float).reshape(d_prime, d_prime)
                return np.asarray(fn(t_, x_, y_, z_, G), dtype=float)

            return call

        gvec = sp.Matrix(ge)
        return cls(
            d=d,
            d_prime=d_prime,
            f=lam(fe),
            g=lam(gvec.reshape(d, 1).T.tolist()[0]),
            f_y=lam(sp.diff(fe, y)),
            f_z=lam([sp.diff(fe, z) for z in zs]),
            f_gamma=lam(sp.Matrix(d_prime, d_prime, lambda i, j: sp.diff(fe, gam[i, j])).tolist()),
            g_x=lam([[sp.diff(gj, xi) for gj in ge] for xi in xs]),
            g_y=lam([sp.diff(gj, y) for gj in ge]),
            g_z=lam([[sp.diff(gj, zi) for gj in ge] for zi in zs]),
            g_omega=None,
            deterministic=True,
        )


@dataclass(frozen=True)
class DerivedExpansionCoefficients:
    t_u: float
    omega_u: np.ndarray
    x_omega_u: np.ndarray
    omega_omega_u: np.ndarray
    ito_drift: float


def _jet(u: RandomField, k: int, x: np.ndarray, path: SamplePath):
    w, grid = path.values, path.grid
    dp = u.d_prime

    def e(*ii):
        return tuple(sum(1 for i in ii if i == j) for j in range(dp))

    y = float(u.derivative_at((), e(), k, x, w, grid))
    z = np.array([float(u.derivative_at((), e(i), k, x, w, grid)) for i in range(dp)])
    gamma = np.array([[float(u.derivative_at((), e(i, j), k, x, w, grid)) for j in range(dp)] for i in range(dp)])
    return y, z, gamma


def _check_dims(c: SpdeCoefficients, u: RandomField, path: SamplePath, x) -> np.ndarray:
    if c.d != u.d or c.d_prime != u.d_prime or path.d != u.d:
        raise QueryError("dimensions of coefficients, field and path disagree")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (u.d_prime,):
        raise QueryError(f"x must have dimension {u.d_prime}")
    return x


def derive_coefficients(c: SpdeCoefficients, u: RandomField, t: float, x, path: SamplePath) -> DerivedExpansionCoefficients:
    """Path-derivative coefficients of ``u`` at ``(t, x)`` from ``f``, ``g`` and the spatial jet."""
    x = _check_dims(c, u, path, x)
    k = path.grid.index(t)
    y, z, gamma = _jet(u, k, x, path)
    g = np.asarray(c.g(t, x, y, z, gamma), float).reshape(c.d)
    gx = np.asarray(c.need("g_x")(t, x, y, z, gamma), float).reshape(c.d_prime, c.d)
    gy = np.asarray(c.need("g_y")(t, x, y, z, gamma), float).reshape(c.d)
    gz = np.asarray(c.need("g_z")(t, x, y, z, gamma), float).reshape(c.d_prime, c.d)
    gw = c._g_omega(t, x, y, z, gamma)
    x_omega = gx + np.outer(z, gy) + gamma @ gz
    omega_omega = gw + np.outer(g, gy) + x_omega.T @ gz
    f = float(np.ravel(c.f(t, x, y, z, gamma))[0])
    return DerivedExpansionCoefficients(
        t_u=f,
        omega_u=g,
        x_omega_u=x_omega,
        omega_omega_u=omega_omega,
        ito_drift=f + 0.5 * float(np.trace(omega_omega)),
    )


def field_coefficients(u: RandomField, t: float, x, path: SamplePath) -> DerivedExpansionCoefficients:
    """The same quantities read directly off the field's analytic path derivatives."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = path.grid.index(t)
    w, grid = path.values, path.grid
    d, dp = u.d, u.d_prime
    zero = (0,) * dp

    def D(th, ell=zero):
        return float(u.derivative_at(th, ell, k, x, w, grid))

    units = [tuple(1 if j == i else 0 for j in range(dp)) for i in range(dp)]
    H = np.array([[D((a, b)) for b in range(1, d + 1)] for a in range(1, d + 1)])
    return DerivedExpansionCoefficients(
        t_u=D((0,)),
        omega_u=np.array([D((a,)) for a in range(1, d + 1)]),
        x_omega_u=np.array([[D((a,), units[i]) for a in range(1, d + 1)] for i in range(dp)]),
        omega_omega_u=H,
        ito_drift=D((0,)) + 0.5 * float(np.trace(H)),
    )


def route_errors(c: SpdeCoefficients, u: RandomField, t: float, x, path: SamplePath) -> dict:
    """Relative disagreement of the coefficient route and the field route, per quantity."""
    a = derive_coefficients(c, u, t, x, path)
    b = field_coefficients(u, t, x, path)
    return {
        "t_u": rel_err(a.t_u, b.t_u),
        "omega_u": rel_err(a.omega_u, b.omega_u),
        "x_omega_u": rel_err(a.x_omega_u, b.x_omega_u),
        "omega_omega_u": rel_err(a.omega_omega_u, b.omega_omega_u),
        "ito_drift": rel_err(a.ito_drift, b.ito_drift),
    }


def parabolicity(c: SpdeCoefficients, probe, tol: float = 1e-10) -> tuple[np.ndarray, bool]:
    """``d_gamma F - 1/2 g_z g_z^T`` at ``probe = (t, x, y, z, gamma)`` and a PSD flag.

    ``d_gamma F`` is the symbolic/closure ``f_gamma`` plus the ``gamma``-slope
    of the correction term, which is ``1/2 g_z g_z^T``; the returned matrix is
    checked against ``f_gamma``.
    """
    t, x, y, z, gamma = probe
    x = np.atleast_1d(np.asarray(x, float))
    z = np.atleast_1d(np.asarray(z, float))
    gamma = np.asarray(gamma, float).reshape(c.d_prime, c.d_prime)
    f_gamma = np.asarray(c.need("f_gamma")(t, x, y, z, gamma), float).reshape(c.d_prime, c.d_prime)
    gz = np.asarray(c.need("g_z")(t, x, y, z, gamma), float).reshape(c.d_prime, c.d)
    # gamma-slope of F by central differences; F is affine in gamma apart from f
    dF = np.zeros((c.d_prime, c.d_prime))
    step = 1e-4
    for i in range(c.d_prime):
        for j in range(c.d_prime):
            up = gamma.copy()
            dn = gamma.copy()
            up[i, j] += step
            dn[i, j] -= step
            dF[i, j] = (c.ito_drift(t, x, y, z, up) - c.ito_drift(t, x, y, z, dn)) / (2 * step)
    mat = dF - 0.5 * gz @ gz.T
    if rel_err(mat, f_gamma) > 1e-6:
        raise ConsistencyError("d_gamma F - g_z g_z^T / 2 disagrees with f_gamma")
    sym = 0.5 * (f_gamma + f_gamma.T)
    return f_gamma, bool(np.min(np.linalg.eigvalsh(sym)) >= -tol)


def six_tuple(c: SpdeCoefficients, u: RandomField, t: float, x, path: SamplePath, tol: float = REL_TOL):
    """``(a, b, c, p, q, X)`` for ``d = d' = 1`` from the field's derivatives.

    The same six numbers are rebuilt from ``(F, g, D_z g, G_2)`` with
    ``G_2 = (g, g_x + g_y u_x + g_z u_xx, .)`` and ``<D_z g, G_2> = g_y g +
    g_z G_2^{(2)}``; any componentwise relative disagreement above ``tol``
    raises ConsistencyError.
    """
    if u.d != 1 or u.d_prime != 1:
        raise CapabilityError("the six-tuple is defined for d = d' = 1")
    if not c.deterministic:
        raise CapabilityError("the six-tuple needs deterministic coefficients")
    x = _check_dims(c, u, path, x)
    k = path.grid.index(t)
    w, grid = path.values, path.grid

    def D(th, ell):
        return float(u.derivative_at(th, (ell,), k, x, w, grid))

    direct = np.array([D((0,), 0), D((1,), 0), D((1, 1), 0), D((), 1), D((1,), 1), D((), 2)])
    y, z, gamma = _jet(u, k, x, path)
    g = float(np.asarray(c.g(t, x, y, z, gamma)).reshape(-1)[0])
    gx = float(np.asarray(c.need("g_x")(t, x, y, z, gamma)).reshape(-1)[0])
    gy = float(np.asarray(c.need("g_y")(t, x, y, z, gamma)).reshape(-1)[0])
    gz = float(np.asarray(c.need("g_z")(t, x, y, z, gamma)).reshape(-1)[0])
    G2 = gx + gy * z[0] + gz * gamma[0, 0]
    inner = gy * g + gz * G2
    F = c.ito_drift(t, x, y, z, gamma)
    rebuilt = np.array([F - 0.5 * inner, g, inner, z[0], G2, gamma[0, 0]])
    err = rel_err(rebuilt, direct)
    if err > tol:
        raise ConsistencyError(f"six-tuple routes disagree by {err:.3e} (direct {direct}, rebuilt {rebuilt})")
    return tuple(float(v) for v in direct)


def spde_expand(c: SpdeCoefficients, u: RandomField, path: SamplePath, q: ExpansionQuery, min_steps: int = MIN_STEPS) -> ExpansionResult:
    """Second-order field expansion with path coefficients taken from ``f`` and ``g``.

    Terms are keyed exactly like ``expand_field`` at ``m = 2``.
    """
    if q.m != 2:
        raise CapabilityError("the coefficient-route expansion is second order")
    x = _check_dims(c, u, path, q.x)
    h = np.atleast_1d(np.asarray(q.h, dtype=float))
    k, L = q.resolve(path.grid, min_steps)
    t = k * path.grid.dt
    coef = derive_coefficients(c, u, t, x, path)
    y, z, gamma = _jet(u, k, x, path)
    w, dt = path.values, path.grid.dt
    terms = {}
    predicted = 0.0
    for idx in enumerate_indices(2, u.d, u.d_prime):
        th, ell = idx.theta.entries, idx.ell.entries
        n_ell = sum(ell)
        nz = [i for i, e in enumerate(ell) for _ in range(e)]
        if th == ():
            value = y if n_ell == 0 else (z[nz[0]] if n_ell == 1 else gamma[nz[0], nz[1]])
        elif th == (0,):
            value = coef.t_u
        elif len(th) == 1:
            value = coef.omega_u[th[0] - 1] if n_ell == 0 else coef.x_omega_u[nz[0], th[0] - 1]
        else:
            value = coef.omega_omega_u[th[0] - 1, th[1] - 1]
        mono = float(np.prod(h ** np.asarray(ell))) / ell_factorial(ell)
        term = Term(float(value), float(signed_values(th, w, dt, k, k + L)), mono)
        terms[idx] = term
        predicted += term.value
    actual = float(u.values_at(k + L, x + h, w, path.grid))
    return ExpansionResult(q, terms, predicted, actual, actual - predicted)


_CASES = {
    "transport:sin": ("0", ["z1"], "transport:sin"),
    "transport:gauss": ("0", ["z1"], "transport:gauss"),
    "transport:identity": ("0", ["z1"], "transport:identity"),
    "multiplicative": ("0", ["y"], "multiplicative"),
    "heat-deterministic": ("gam11/2", ["0"], "heat-deterministic"),
}

SPDE_CASES = tuple(_CASES)


def get_spde_case(name: str) -> tuple[SpdeCoefficients, RandomField]:
    """Named coefficient set together with its analytic solution field."""
    if name not in _CASES:
        raise ConfigurationError(f"unknown SPDE case {name!r}")
    f, g, field_name = _CASES[name]
    return SpdeCoefficients.from_expressions(f, g), get_field(field_name)
