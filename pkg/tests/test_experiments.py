import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathtaylor.brownian import TimeGrid, simulate_ensemble
from pathtaylor.cli import main
from pathtaylor.errors import ConfigurationError
from pathtaylor.experiments import (
    ExperimentConfig,
    estimate_norms,
    hoelder_seminorm,
    levy_area_check,
    moment_sup,
    norm_words,
    run_identity_suite,
    run_scaling,
    target_slope,
)
from pathtaylor.functionals import ConstantFunctional

SMALL = dict(N=256, M=200, chunk=50, stride_check=False, delta_points=4)


def small(**kw):
    return ExperimentConfig(**{**SMALL, **kw})


@pytest.mark.parametrize(
    "changes",
    [
        dict(delta_points=3),
        dict(delta_min=5 / 256),
        dict(t2=0.9),
        dict(M=99),
        dict(m=7),
        dict(variant="symmetric", m=1),
        dict(functional="nope"),
        dict(experiment="other"),
        dict(p=0.5),
        dict(alpha=0.0),
        dict(window="moving"),
        dict(d=2),
        dict(delta_points=40, delta_min=10 / 256),
        dict(t1=0.6, t2=0.7),
        dict(refine_paths=1),
    ],
)
def test_invalid_scaling_configs(changes):
    with pytest.raises(ConfigurationError):
        small(**changes).validate()


def test_small_ensemble_is_fine_outside_statistics():
    small(experiment="identities", M=1).validate()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"experiment": "scaling", "colour": "red"})


def test_json_roundtrip(tmp_path):
    cfg = small(functional="area", variant="symmetric", h_factors=(0.0, 1.0))
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps(cfg.resolved()))
    assert ExperimentConfig.from_json(f).resolved() == cfg.resolved()


def test_delta_grid():
    steps = small(delta_points=8, N=4096).delta_steps()
    assert steps[0] == 1024 and steps[-1] == 16
    assert np.all(np.diff(steps) < 0)
    ratios = steps[:-1] / steps[1:]
    assert np.allclose(ratios, 64 ** (1 / 7), rtol=0.03)


def test_target_slopes():
    assert target_slope(small(m=0)) == 0.5
    assert target_slope(small(m=2)) == 1.5
    assert target_slope(small(functional="area", variant="symmetric")) == 1.0


def test_scaling_reports_byte_identical(tmp_path):
    cfg = small(functional="markovian:sin", m=1)
    a = run_scaling(cfg).write(tmp_path / "a")
    b = run_scaling(cfg).write(tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_scaling_thread_invariant():
    cfg = small(functional="area:sin", m=2)
    a = run_scaling(cfg)
    b = run_scaling(cfg.replace(threads=3))
    assert a.to_csv() == b.to_csv()
    assert a.fit == b.fit


def test_scaling_report_contents():
    rep = run_scaling(small(functional="markovian:sin", m=0, stride_check=True, stride_check_paths=100))
    s = json.loads(rep.to_json())
    assert s["provenance"]["config"]["functional"] == "markovian:sin"
    assert {"seed", "grid", "version"} <= set(s["provenance"])
    assert np.isfinite(s["slope"]) and 0 <= s["r_squared"] <= 1
    assert s["stride_check"]["half_stride"] <= s["stride_check"]["stride"]
    header = rep.to_csv().splitlines()[0]
    assert header == "experiment,functional,m,alpha,p,delta,sign,statistic,value,seed"
    assert all(r["value"] > 0 for r in rep.rows)
    assert {r["sign"] for r in rep.rows} >= {"+", "-"}


def test_exact_scaling_run():
    rep = run_scaling(small(functional="markovian:square", m=2))
    assert rep.exact and rep.passed and rep.fit["slope"] is None


def test_field_scaling_small():
    rep = run_scaling(small(functional="transport:sin", m=2, M=100, x_points=3))
    assert np.isfinite(rep.fit["slope"])


def test_scaling_rejects_catalog():
    with pytest.raises(ConfigurationError):
        run_scaling(small(functional="catalog"))


def test_degenerate_identity_suite():
    rep = run_identity_suite(small(experiment="identities", functional="markovian:sin", M=1, exact_paths=1,
                                   refine_paths=400))
    skipped = [c for c in rep.checks if c["passed"] is None]
    assert skipped and all(c["kind"] == "statistical" for c in skipped)
    assert rep.passed, rep.failures()


def test_identity_suite_markovian_sin():
    rep = run_identity_suite(small(experiment="identities", functional="markovian:sin", M=1, exact_paths=20))
    exact = [c for c in rep.checks if c["kind"] == "exact"]
    assert exact and all(c["passed"] for c in exact)
    assert all(c["worst"] <= 1e-10 for c in exact if c["worst"] is not None)


def test_levy_area_check_logic():
    class Fake:
        def __init__(self, slope, exact=False):
            self.fit, self.exact, self.functional = {"slope": slope}, exact, "area"

    assert levy_area_check(Fake(1.5), Fake(1.0))["passed"]
    assert levy_area_check(Fake(None, exact=True), Fake(1.0))["passed"]
    assert not levy_area_check(Fake(1.3), Fake(1.0))["passed"]
    assert not levy_area_check(Fake(1.5), Fake(1.25))["passed"]


# ---------------------------------------------------------------------------
# norms


def test_norm_words():
    assert norm_words(0, 1) == [()]
    assert norm_words(1, 2) == [(), (1,), (2,)]
    assert norm_words(2, 1) == [(), (0,), (1,), (1, 1)]


def test_zero_functional_norms():
    rep = estimate_norms(ExperimentConfig(experiment="norms", M=100, N=64, norm_order=2), ConstantFunctional(0.0, d=1))
    assert rep.norm == 0.0 and rep.hoelder == 0.0


def test_identity_norm():
    rep = estimate_norms(ExperimentConfig(experiment="norms", functional="markovian:identity", M=2000, N=256, p=2))
    assert abs(rep.norm - 2.0) <= 3 * rep.stderr + 1e-12
    base = next(t for t in rep.terms if t["word"] == [])
    assert base["argmax_time"] > 0.9


def test_brownian_hoelder_stable():
    g = TimeGrid(1.0, 128)
    times = np.arange(g.N + 1) * g.dt
    small_ens = simulate_ensemble(g, 1, 500, 3)[:, 0, :]
    large_ens = simulate_ensemble(g, 1, 2000, 4)[:, 0, :]
    a, _ = hoelder_seminorm(small_ens, times, 0.4, 8)
    b, _ = hoelder_seminorm(large_ens, times, 0.4, 8)
    assert np.isfinite(a) and np.isfinite(b)
    assert 0.8 <= a / b <= 1.25


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.sampled_from([1.0, 2.0, 4.0]))
def test_moment_sup_scales(c, p):
    x = np.random.default_rng(0).normal(size=(50, 7))
    a, _, j = moment_sup(x, p)
    b, _, k = moment_sup(c * x, p)
    assert j == k and b == pytest.approx(c * a)


# ---------------------------------------------------------------------------
# command line


def test_cli_expand(capsys):
    assert main(["expand", "--functional", "markovian:square", "--m", "2", "--N", "256"]) == 0
    out = capsys.readouterr().out
    assert "remainder" in out


def test_cli_expand_bad_query(capsys):
    assert main(["expand", "--delta", "0.01", "--N", "256"]) == 2


def test_cli_config_error(capsys, tmp_path):
    assert main(["scaling", "--M", "10", "--out", str(tmp_path)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_scaling_with_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**SMALL, "functional": "markovian:sin", "m": 1}))
    out = tmp_path / "out"
    assert main(["scaling", "--config", str(cfg), "--out", str(out), "--strict"]) in (0, 1)
    assert (out / "scaling_markovian-sin_full_m1.json").exists()
    assert (out / "scaling_markovian-sin_full_m1.csv").exists()


def test_cli_strict_failure(tmp_path):
    cfg = tmp_path / "cfg.json"
    # a band of zero width cannot be met by a Monte Carlo slope
    cfg.write_text(json.dumps({**SMALL, "functional": "markovian:sin", "m": 1, "slope_band": 0.0}))
    args = ["scaling", "--config", str(cfg), "--out", str(tmp_path)]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 1


def test_cli_identities_and_norms(tmp_path):
    out = str(tmp_path)
    assert main(["identities", "--functional", "markovian:identity", "--M", "1", "--N", "256", "--out", out]) == 0
    assert main(["norms", "--functional", "markovian:identity", "--M", "100", "--N", "64", "--out", out]) == 0
    assert (tmp_path / "identities_markovian-identity.json").exists()
    assert (tmp_path / "norms_markovian-identity.json").exists()
