import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathtaylor.brownian import SamplePath, TimeGrid, refine_path, simulate_ensemble, simulate_path
from pathtaylor.errors import CapabilityError, ConfigurationError, QueryError
from pathtaylor.functionals import (
    FUNCTIONAL_NAMES,
    FrozenField,
    MarkovianField,
    get_field,
    get_functional,
)
from pathtaylor.integrals import IteratedTable
from pathtaylor.stats import refinement_order, rms
from pathtaylor.taylor import (
    SEVEN_TERMS,
    ExpansionQuery,
    definitional_values,
    expand,
    expand_field,
    field_remainder_recursion_residual,
    field_remainder_scan,
    field_second_order_terms,
    group_terms,
    remainder_scan,
    remainder_via_representation,
    representation_values,
    second_order_forms,
)

from conftest import paths_of, rel

DT = 1 / 512


def test_order_zero(path1):
    u = get_functional("markovian:sin")
    r = expand(u, path1, ExpansionQuery(0.5, 0.125, 0))
    assert r.predicted == u.evaluate(0.5, path1)
    assert r.remainder == u.evaluate(0.625, path1) - u.evaluate(0.5, path1)


@pytest.mark.parametrize("delta", [0.125, -0.125, 20 * DT, -20 * DT])
@pytest.mark.parametrize("m", [1, 2, 3])
def test_identity_expansion_exact(path1, delta, m):
    r = expand(get_functional("markovian:identity"), path1, ExpansionQuery(0.5, delta, m))
    assert r.remainder == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("delta", [0.25, -0.25, 10 * DT, -10 * DT])
def test_square_expansion_exact(path1, delta):
    r = expand(get_functional("markovian:square"), path1, ExpansionQuery(0.5, delta, 2))
    assert abs(r.remainder) <= 1e-12 * max(1.0, abs(r.actual))


@pytest.mark.parametrize("delta", [0.125, -0.125])
def test_area_second_order_exact(path2, delta):
    r = expand(get_functional("area"), path2, ExpansionQuery(0.5, delta, 2))
    assert abs(r.remainder) <= 1e-14


@pytest.mark.parametrize("delta", [0.125, -0.125])
def test_area_symmetric_misses_the_area(path2, delta):
    u = get_functional("area")
    q = ExpansionQuery(0.5, delta, 2)
    full = expand(u, path2, q)
    sym = expand(u, path2, q, variant="symmetric")
    forms = second_order_forms(u, path2, q)
    # the dropped term is H : A / 2 with H = [[0, 0], [1, 0]]
    assert sym.remainder == pytest.approx(full.remainder + 0.5 * forms["area"][1, 0], abs=1e-14)


@pytest.mark.parametrize("name", ["markovian:sin2", "area", "area:sin", "cylindrical"])
@pytest.mark.parametrize("delta", [0.125, -0.125])
def test_matrix_forms_match_index_expansion(path2, name, delta):
    u = get_functional(name)
    q = ExpansionQuery(0.75, delta, 2)
    forms = second_order_forms(u, path2, q)
    full = expand(u, path2, q)
    sym = expand(u, path2, q, variant="symmetric")
    assert rel(forms["signature"], full.predicted) <= 1e-12
    assert rel(forms["levy"], full.predicted) <= 1e-12
    assert rel(forms["symmetric"], sym.predicted) <= 1e-12


def test_term_rows(path1):
    r = expand(get_functional("markovian:sin"), path1, ExpansionQuery(0.5, 0.125, 2))
    rows = r.rows()
    assert len(rows) == len(r.terms) == 4
    assert sum(row["contribution"] for row in rows) == pytest.approx(r.predicted)


@pytest.mark.parametrize(
    "t, delta",
    [(0.5, 0.0), (0.5, 5 * DT), (0.5, 0.1), (0.0625, -0.125), (0.9375, 0.125)],
)
def test_query_validation(path1, t, delta):
    with pytest.raises(QueryError):
        expand(get_functional("markovian:sin"), path1, ExpansionQuery(t, delta, 2))


def test_base_time_snaps_to_node(path1):
    u = get_functional("markovian:sin")
    a = expand(u, path1, ExpansionQuery(0.5 + 0.3 * DT, 0.125, 2))
    b = expand(u, path1, ExpansionQuery(0.5, 0.125, 2))
    assert a.remainder == b.remainder


def test_order_cap(path1):
    with pytest.raises((CapabilityError, ConfigurationError)):
        expand(get_functional("markovian:sin", order=2), path1, ExpansionQuery(0.5, 0.125, 3))
    with pytest.raises((CapabilityError, ConfigurationError)):
        expand(get_functional("markovian:sin"), path1, ExpansionQuery(0.5, 0.125, 5))


def test_symmetric_needs_second_order(path1):
    with pytest.raises(ConfigurationError):
        expand(get_functional("markovian:sin"), path1, ExpansionQuery(0.5, 0.125, 1), variant="symmetric")


def test_dimension_mismatch(path1):
    with pytest.raises(QueryError):
        expand(get_functional("area"), path1, ExpansionQuery(0.5, 0.125, 2))


# ---------------------------------------------------------------------------
# fields


@pytest.mark.parametrize("delta", [0.125, -0.125])
def test_field_with_zero_offset_is_frozen_expansion(path1, delta):
    u = get_field("transport:sin")
    fq = ExpansionQuery(0.5, delta, 2, (0.3,), (0.0,))
    a = expand_field(u, path1, fq)
    b = expand(FrozenField(u, [0.3]), path1, ExpansionQuery(0.5, delta, 2))
    assert a.predicted == pytest.approx(b.predicted, abs=1e-15)
    assert a.remainder == pytest.approx(b.remainder, abs=1e-15)


def test_deterministic_quadratic_exact(path1):
    u = MarkovianField("x1**2", d=1, d_prime=1)
    for delta in (10 * DT, -0.25):
        r = expand_field(u, path1, ExpansionQuery(0.5, delta, 2, (0.4,), (-1.3,)))
        assert abs(r.remainder) <= 1e-14


def test_transport_identity_exact(path1):
    u = get_field("transport:identity")
    r = expand_field(u, path1, ExpansionQuery(0.5, 0.125, 2, (0.4,), (0.0,)))
    assert abs(r.remainder) <= 1e-15


@pytest.mark.parametrize("name", ["transport:sin", "multiplicative", "field:quadratic", "field:sin2"])
@pytest.mark.parametrize("delta", [0.125, -0.125])
def test_seven_term_grouping(name, delta):
    u = get_field(name)
    p = simulate_path(TimeGrid(1.0, 512), u.d, 5)
    q = ExpansionQuery(0.5, delta, 2, (0.3,), (0.2,))
    parts = field_second_order_terms(u, p, q)
    groups = group_terms(expand_field(u, p, q))
    for key in SEVEN_TERMS:
        assert parts[key] == pytest.approx(groups[key], abs=1e-13)


def test_field_query_needs_points(path1):
    with pytest.raises(QueryError):
        expand_field(get_field("transport:sin"), path1, ExpansionQuery(0.5, 0.125, 2))
    with pytest.raises(QueryError):
        expand_field(get_field("transport:sin"), path1, ExpansionQuery(0.5, 0.125, 2, (0.1, 0.2), (0.0,)))


def test_recursion_zero_offset(path1):
    u = get_field("transport:sin")
    q = ExpansionQuery(0.5, 0.125, 2, (0.3,), (0.0,))
    assert field_remainder_recursion_residual(u, path1, q) == 0.0


@pytest.mark.parametrize("m", [1, 2])
@pytest.mark.parametrize("delta", [0.125, -0.125])
def test_recursion_polynomial_field(path1, m, delta):
    u = get_field("field:quadratic")
    q = ExpansionQuery(0.5, delta, m, (0.3,), (0.7,))
    assert abs(field_remainder_recursion_residual(u, path1, q, quad_order=2)) <= 1e-10


def test_recursion_quadrature_convergence(path1):
    u = get_field("transport:sin")
    q = ExpansionQuery(0.5, 0.125, 2, (0.3,), (0.7,))
    res = [abs(field_remainder_recursion_residual(u, path1, q, quad_order=o)) for o in (1, 2, 3, 4)]
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] <= 1e-6


# ---------------------------------------------------------------------------
# remainder representations


@pytest.mark.parametrize("name", FUNCTIONAL_NAMES)
@pytest.mark.parametrize("m", [0, 1, 2])
def test_backward_hoelder_recursion_exact(name, m):
    u = get_functional(name)
    p = simulate_path(TimeGrid(1.0, 256), u.d, 13)
    q = ExpansionQuery(0.75, -0.125, m)
    rep = remainder_via_representation(u, p, q, "hoelder")
    assert rep == pytest.approx(expand(u, p, q).remainder, abs=1e-12)


def _representation_order(name, m, sign, variant, M=600, N=256):
    u = get_functional(name)
    g = TimeGrid(1.0, N)
    wc = simulate_ensemble(g, u.d, M, 17)
    errs = []
    for f in (1, 4):
        w = wc if f == 1 else np.stack([refine_path(SamplePath(g, wc[i], 17, i), 4).values for i in range(M)])
        gg = g if f == 1 else g.refined(4)
        k, L = (3 * N // 4) * f, sign * (N // 8) * f
        errs.append(rms(definitional_values(u, w, gg, k, L, m) - representation_values(u, w, gg, k, L, m, variant)))
    return refinement_order(errs[0], errs[1], 4)


@pytest.mark.parametrize(
    "name, m, sign, variant",
    [
        ("markovian:sin", 0, 1, "full"),
        ("markovian:sin", 2, -1, "full"),
        ("area", 2, 1, "full"),
        ("area:sin", 2, 1, "full"),
        ("markovian:expsin", 1, -1, "hoelder"),
        ("markovian:sin", 2, 1, "hoelder"),
        ("drift", 1, 1, "full"),
    ],
)
def test_representation_refinement(name, m, sign, variant):
    r = _representation_order(name, m, sign, variant)
    assert r.passes(0.9), r


def test_representation_capability(path1):
    u = get_functional("markovian:sin", order=3)
    with pytest.raises(CapabilityError):
        remainder_via_representation(u, path1, ExpansionQuery(0.5, 0.125, 2), "full")
    with pytest.raises(ConfigurationError):
        remainder_via_representation(u, path1, ExpansionQuery(0.5, 0.125, 1), "other")


# ---------------------------------------------------------------------------
# batch scans


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["markovian:sin", "area:sin", "drift", "markovian:sin2"]), st.integers(0, 2),
       st.sampled_from([0, 1]))
def test_scan_matches_single_expansions(name, m, variant_symmetric):
    u = get_functional(name)
    variant = "symmetric" if (variant_symmetric and m == 2) else "full"
    g = TimeGrid(1.0, 256)
    paths = paths_of(g, u.d, 2, 9)
    w = np.stack([p.values for p in paths])
    base = np.array([20, 128, 250])
    steps = np.array([16, -16, 40, -40])
    R = remainder_scan(u, w, g, base, steps, m, variant, IteratedTable(w, g.dt))[m]
    for i, p in enumerate(paths):
        for b, k in enumerate(base):
            for s, L in enumerate(steps):
                if not 0 <= k + L <= g.N:
                    assert np.isnan(R[i, b, s])
                    continue
                want = expand(u, p, ExpansionQuery(k * g.dt, L * g.dt, m), variant).remainder
                assert R[i, b, s] == pytest.approx(want, abs=1e-12)


def test_field_scan_matches_single_expansions():
    u = get_field("transport:sin")
    g = TimeGrid(1.0, 256)
    paths = paths_of(g, 1, 2, 4)
    w = np.stack([p.values for p in paths])
    base = np.array([64, 128])
    steps = np.array([32, -32])
    xs = np.array([[-0.5], [0.4]])
    hs = np.array([[[0.0], [0.3]], [[0.1], [-0.2]]])
    R = field_remainder_scan(u, w, g, base, steps, xs, hs, 2)
    for i, p in enumerate(paths):
        for b, k in enumerate(base):
            for s, L in enumerate(steps):
                for ix, x in enumerate(xs):
                    for ih, h in enumerate(hs[s]):
                        q = ExpansionQuery(k * g.dt, L * g.dt, 2, tuple(x), tuple(h))
                        assert R[i, b, s, ix, ih] == pytest.approx(expand_field(u, p, q).remainder, abs=1e-12)
