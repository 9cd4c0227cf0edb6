"""Monte Carlo harness: identity suites, remainder-scaling regressions and
empirical norm estimates with reproducible configuration and reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .brownian import SamplePath, TimeGrid, refine_ensemble, simulate_ensemble
from .errors import ConfigurationError, ConsistencyError
from .functionals import (
    FIELD_NAMES,
    FUNCTIONAL_NAMES,
    ConstantFunctional,
    DriftOfPath,
    MarkovianFunctional,
    PathFunctional,
    chain_rule_values,
    get_field,
    get_functional,
    is_field,
    ito_residual_values,
)
from .integrals import IteratedTable, ibp_identity_residual, signed_values, step2_signature
from .spde import SPDE_CASES, get_spde_case, route_errors, six_tuple
from .stats import EXACT_FLOOR, loglog_fit, refinement_order, rms
from .taylor import (
    MAX_ORDER,
    ExpansionQuery,
    definitional_values,
    expand,
    field_remainder_recursion_residual,
    field_remainder_scan,
    remainder_scan,
    representation_values,
)

EXPERIMENTS = ("scaling", "identities", "norms")
STATISTICAL = ("scaling", "norms")
MIN_STATISTICAL_PATHS = 100
MIN_DELTA_STEPS = 10
MIN_DELTA_POINTS = 4
STRIDE_TOLERANCE = 0.05


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """Every knob of an experiment; echoed verbatim into each report.

    ``delta_min=None`` means 16 grid steps and ``stride=None`` means
    ``max(1, N // 256)``.  In ``window="tiled"`` mode the base-time window
    ``[t1, t2]`` is cut into tiles of length ``|delta|`` and the sup is
    taken per tile, scanning every ``min(stride, steps // window_points)``
    nodes; ``window="fixed"`` takes one sup over the whole window.
    """

    experiment: str = "scaling"
    functional: str = "markovian:sin"
    variant: str = "full"
    m: int = 2
    d: int | None = None
    d_prime: int | None = None
    T: float = 1.0
    N: int = 4096
    M: int = 10000
    seed: int = 1
    delta_max: float = 0.25
    delta_min: float | None = None
    delta_points: int = 8
    p: float = 2.0
    alpha: float = 1.0
    t1: float = 0.25
    t2: float = 0.75
    stride: int | None = None
    window: str = "tiled"
    window_points: int = 16
    radius: float = 1.0
    x_points: int = 5
    h_factors: tuple = (0.0, 0.5, 1.0)
    slope_band: float = 0.15
    stride_check: bool = True
    stride_check_paths: int = 1000
    symmetric_check: bool = False
    norm_order: int = 1
    norm_times: int = 256
    refine_N: int = 256
    refine_factor: int = 4
    refine_paths: int = 1000
    exact_paths: int = 100
    chunk: int = 250
    threads: int = 1
    out: str = "reports"

    def __post_init__(self):
        self.h_factors = tuple(float(c) for c in self.h_factors)

    # -- derived quantities

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.N)

    @property
    def field_mode(self) -> bool:
        return is_field(self.functional)

    def scan_stride(self) -> int:
        return self.stride if self.stride is not None else max(1, self.N // 256)

    def delta_steps(self) -> np.ndarray:
        """Geometric step counts from ``delta_max`` down to ``delta_min``, descending."""
        dt = self.T / self.N
        lo = self.delta_min if self.delta_min is not None else 16 * dt
        steps = np.round(np.geomspace(self.delta_max, lo, self.delta_points) / dt).astype(int)
        return steps

    def resolved(self) -> dict:
        out = dataclasses.asdict(self)
        out["h_factors"] = list(self.h_factors)
        out["stride"] = self.scan_stride()
        out["delta_steps"] = [int(s) for s in self.delta_steps()]
        return out

    # -- validation

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}")
        names = FUNCTIONAL_NAMES + FIELD_NAMES + ("catalog",)
        if self.functional not in names:
            raise ConfigurationError(f"unknown functional {self.functional!r}")
        if not (self.T > 0 and self.N >= 1 and self.M >= 1):
            raise ConfigurationError("T, N and M must be positive")
        if not 0 <= self.m <= MAX_ORDER:
            raise ConfigurationError(f"m must lie in 0..{MAX_ORDER}")
        if self.variant not in ("full", "symmetric"):
            raise ConfigurationError("variant must be 'full' or 'symmetric'")
        if self.variant == "symmetric" and self.m != 2:
            raise ConfigurationError("the symmetrized expansion is defined for m = 2 only")
        if self.p < 1 or not 0 < self.alpha <= 1:
            raise ConfigurationError("need p >= 1 and 0 < alpha <= 1")
        if self.window not in ("tiled", "fixed"):
            raise ConfigurationError("window must be 'tiled' or 'fixed'")
        if self.refine_paths < 2 or self.refine_N < 8 or self.refine_factor < 2:
            raise ConfigurationError("refinement checks need refine_paths >= 2, refine_N >= 8, refine_factor >= 2")
        if self.chunk < 1 or self.threads < 1 or self.window_points < 1 or self.scan_stride() < 1:
            raise ConfigurationError("chunk, threads, window_points and stride must be positive")
        if self.functional != "catalog":
            self._check_dims()
        if self.experiment in STATISTICAL and self.M < MIN_STATISTICAL_PATHS:
            raise ConfigurationError(f"statistical experiments need M >= {MIN_STATISTICAL_PATHS}")
        if self.experiment == "scaling":
            self._check_deltas()
        if self.experiment == "norms" and not 0 <= self.norm_order <= MAX_ORDER:
            raise ConfigurationError("norm_order out of range")
        return self

    def _check_dims(self):
        if self.field_mode:
            u = get_field(self.functional)
            if self.d_prime is not None and self.d_prime != u.d_prime:
                raise ConfigurationError(f"{self.functional} has d'={u.d_prime}")
        else:
            u = get_functional(self.functional)
        if self.d is not None and self.d != u.d:
            raise ConfigurationError(f"{self.functional} has d={u.d}")

    def _check_deltas(self):
        if self.delta_points < MIN_DELTA_POINTS:
            raise ConfigurationError(f"need at least {MIN_DELTA_POINTS} delta points for the regression")
        steps = self.delta_steps()
        if np.unique(steps).size != steps.size:
            raise ConfigurationError("delta grid collapses onto repeated grid steps")
        if steps.min() < MIN_DELTA_STEPS:
            raise ConfigurationError(f"delta_min must be at least {MIN_DELTA_STEPS} grid steps")
        dt = self.T / self.N
        if not 0 <= self.t1 < self.t2:
            raise ConfigurationError("need 0 <= t1 < t2")
        if self.t2 + steps.max() * dt > self.T + 1e-12:
            raise ConfigurationError("t2 + delta_max exceeds T")
        if self.window == "tiled" and (self.t2 - self.t1) < steps.max() * dt - 1e-12:
            raise ConfigurationError("the window [t1, t2] must hold at least one tile of length delta_max")
        if self.field_mode and (self.x_points < 1 or self.radius < 0 or not self.h_factors):
            raise ConfigurationError("field scans need x_points >= 1, radius >= 0 and some h_factors")

    # -- serialization

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known - {"delta_steps"}
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**{k: v for k, v in data.items() if k in known})
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(data)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def provenance(cfg: ExperimentConfig) -> dict:
    return {
        "config": cfg.resolved(),
        "seed": cfg.seed,
        "grid": {"T": cfg.T, "N": cfg.N, "dt": cfg.T / cfg.N},
        "version": __version__,
        "sup_note": "sup over a discrete scan grid; a lower bound for the continuum sup",
    }


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in name)


def _map_chunks(cfg: ExperimentConfig, work: Callable[[int, int], object], M: int | None = None) -> list:
    """Run ``work(start, size)`` over fixed path chunks; results come back in chunk order."""
    M = cfg.M if M is None else M
    jobs = [(s, min(cfg.chunk, M - s)) for s in range(0, M, cfg.chunk)]
    if cfg.threads == 1:
        return [work(s, n) for s, n in jobs]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(lambda job: work(*job), jobs))


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalingReport:
    """Per-delta statistics, the log-log fit and provenance of one scaling run."""

    experiment: str
    functional: str
    variant: str
    m: int
    alpha: float
    p: float
    seed: int
    rows: list
    fit: dict
    pathwise_max: float
    target_slope: float
    slope_band: float
    exact: bool
    passed: bool
    stride_check: dict | None
    provenance: dict

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "functional": self.functional,
            "variant": self.variant,
            "m": self.m,
            "slope": self.fit.get("slope"),
            "intercept": self.fit.get("intercept"),
            "r_squared": self.fit.get("r_squared"),
            "slopes_by_sign": self.fit.get("by_sign"),
            "target_slope": self.target_slope,
            "slope_band": self.slope_band,
            "exact": self.exact,
            "pathwise_max": self.pathwise_max,
            "stride_check": self.stride_check,
            "pass": {"slope_within_band": self.passed},
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return _dumps(self.summary())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["experiment", "functional", "m", "alpha", "p", "delta", "sign", "statistic", "value", "seed"])
        for r in self.rows:
            writer.writerow(
                [self.experiment, self.functional, self.m, self.alpha, self.p, repr(r["delta"]), r["sign"],
                 r["statistic"], repr(r["value"]), self.seed]
            )
        return buf.getvalue()

    def write(self, out: str | Path) -> tuple[Path, Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"scaling_{_slug(self.functional)}_{self.variant}_m{self.m}"
        pj, pc = out / f"{stem}.json", out / f"{stem}.csv"
        pj.write_text(self.to_json())
        pc.write_text(self.to_csv())
        return pj, pc


def _tiles(cfg: ExperimentConfig, grid: TimeGrid, L: int, stride: int, points: int):
    """Scan nodes and their tile labels for step count ``L``."""
    k1, k2 = grid.snap(cfg.t1), grid.snap(cfg.t2)
    if cfg.window == "fixed":
        base = np.arange(k1, k2 + 1, stride)
        return base, np.zeros(base.size, dtype=int), 1
    n_tiles = (k2 - k1) // L
    s = max(1, min(stride, L // points))
    base = np.arange(k1, k1 + n_tiles * L + 1, s)
    return base, np.minimum((base - k1) // L, n_tiles - 1), n_tiles


def _tile_sup(a: np.ndarray, tile: np.ndarray, n_tiles: int) -> np.ndarray:
    """Per-tile sup over the base axis (axis 1); ``nan`` entries are skipped."""
    a = np.where(np.isnan(a), -np.inf, a)
    return np.stack([a[:, tile == i].max(axis=1) for i in range(n_tiles)], axis=1)


class _Accumulator:
    """Per-path sums for the moment statistic and its delta-method error."""

    def __init__(self, shape):
        self.s1 = np.zeros(shape)
        self.s2 = np.zeros(shape)
        self.n = 0
        self.pmax = np.zeros(shape)

    def add(self, y: np.ndarray, pmax: np.ndarray):
        # y: (P, ...) per-path mean of sup^p over tiles
        self.s1 += y.sum(axis=0)
        self.s2 += (y * y).sum(axis=0)
        self.n += y.shape[0]
        self.pmax = np.maximum(self.pmax, pmax)

    def merge(self, other: "_Accumulator"):
        self.s1 += other.s1
        self.s2 += other.s2
        self.n += other.n
        self.pmax = np.maximum(self.pmax, other.pmax)

    def moments(self, p: float):
        mean = self.s1 / self.n
        var = np.maximum(self.s2 / self.n - mean * mean, 0.0)
        se_mean = np.sqrt(var / max(self.n - 1, 1))
        value = mean ** (1.0 / p)
        with np.errstate(divide="ignore", invalid="ignore"):
            se = np.where(mean > 0, value / (p * mean) * se_mean, 0.0)
        return value, se


def _path_chunk(cfg, u, grid, steps, stride, points, start, P):
    w = simulate_ensemble(grid, u.d, P, cfg.seed, start)
    table = IteratedTable(w, grid.dt)
    acc = _Accumulator((len(steps), 3))
    y = np.zeros((P, len(steps), 3))
    pm = np.zeros((len(steps), 3))
    for j, L in enumerate(steps):
        base, tile, n_tiles = _tiles(cfg, grid, int(L), stride, points)
        R = remainder_scan(u, w, grid, base, np.array([L, -L]), cfg.m, cfg.variant, table)[cfg.m]
        a = np.abs(R)
        sups = [_tile_sup(a[..., 0], tile, n_tiles), _tile_sup(a[..., 1], tile, n_tiles)]
        sups.append(np.maximum(sups[0], sups[1]))
        scale = (L * grid.dt) ** ((cfg.m + cfg.alpha) / 2)
        for c, sp in enumerate(sups):
            y[:, j, c] = np.mean(sp**cfg.p, axis=1)
            pm[j, c] = sp.max() / scale
    acc.add(y, pm)
    return acc


def _field_directions(d_prime: int) -> np.ndarray:
    eye = np.eye(d_prime)
    return np.concatenate([eye, -eye])


def _field_chunk(cfg, u, grid, steps, stride, points, start, P):
    w = simulate_ensemble(grid, u.d, P, cfg.seed, start)
    table = IteratedTable(w, grid.dt)
    axes = [np.linspace(-cfg.radius, cfg.radius, cfg.x_points)] * u.d_prime
    xs = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    dirs = _field_directions(u.d_prime)
    cs = np.asarray(cfg.h_factors)
    nc = cs.size
    acc = _Accumulator((len(steps), nc))
    y = np.zeros((P, len(steps), nc))
    pm = np.zeros((len(steps), nc))
    for j, L in enumerate(steps):
        delta = L * grid.dt
        base, tile, n_tiles = _tiles(cfg, grid, int(L), stride, points)
        # offsets: (n_steps=2, nc * ndir, d')
        hv = (cs[:, None, None] * math.sqrt(delta) * dirs[None, :, :]).reshape(-1, u.d_prime)
        hs = np.broadcast_to(hv[None], (2,) + hv.shape)
        R = field_remainder_scan(u, w, grid, base, np.array([L, -L]), xs, hs, cfg.m, table)
        a = np.abs(R).reshape(R.shape[:-1] + (nc, dirs.shape[0]))
        a = np.where(np.isnan(a), -np.inf, a).max(axis=(2, 3, 5))  # (P, nb, nc)
        for c in range(nc):
            sp = _tile_sup(a[..., c], tile, n_tiles)
            y[:, j, c] = np.mean(sp**cfg.p, axis=1)
            pm[j, c] = sp.max() / (delta * (1 + cs[c] ** 2)) ** ((cfg.m + cfg.alpha) / 2)
    acc.add(y, pm)
    return acc


def _collect(cfg: ExperimentConfig, M: int, stride: int, points: int) -> tuple[_Accumulator, np.ndarray]:
    grid = cfg.grid
    steps = cfg.delta_steps()
    if cfg.field_mode:
        u = get_field(cfg.functional)
        worker = _field_chunk
    else:
        u = get_functional(cfg.functional)
        worker = _path_chunk
    parts = _map_chunks(cfg, lambda s, n: worker(cfg, u, grid, steps, stride, points, s, n), M)
    total = parts[0]
    for part in parts[1:]:
        total.merge(part)
    return total, steps


def _fit(x, y) -> dict | None:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.all(y <= EXACT_FLOOR):
        return None
    keep = y > 0
    f = loglog_fit(x[keep], y[keep])
    return {"slope": float(f.slope), "intercept": float(f.intercept), "r_squared": float(f.r_squared)}


def _scaling_fit(cfg: ExperimentConfig, acc: _Accumulator, steps) -> tuple[dict, list, bool]:
    value, se = acc.moments(cfg.p)
    delta = steps * (cfg.T / cfg.N)
    rows = []
    if cfg.field_mode:
        cs = np.asarray(cfg.h_factors)
        scale = delta[:, None] * (1 + cs[None, :] ** 2)
        for j, dl in enumerate(delta):
            for c, cv in enumerate(cs):
                tag = f"[h={cv:g}]"
                rows.append({"delta": float(dl), "sign": "both", "statistic": "moment" + tag, "value": float(value[j, c])})
                rows.append({"delta": float(dl), "sign": "both", "statistic": "stderr" + tag, "value": float(se[j, c])})
                rows.append({"delta": float(dl), "sign": "both", "statistic": "scale" + tag, "value": float(scale[j, c])})
                rows.append({"delta": float(dl), "sign": "both", "statistic": "pathwise" + tag, "value": float(acc.pmax[j, c])})
        fit = _fit(scale.ravel(), value.ravel())
        by_c = {f"{cv:g}": _fit(delta, value[:, c]) for c, cv in enumerate(cs)}
        fit = dict(fit or {"slope": None, "intercept": None, "r_squared": None}, by_sign=None, by_h_factor=by_c)
        exact = bool(np.all(value <= EXACT_FLOOR))
        return fit, rows, exact
    for j, dl in enumerate(delta):
        for c, sign in enumerate(("+", "-", "both")):
            rows.append({"delta": float(dl), "sign": sign, "statistic": "moment", "value": float(value[j, c])})
            rows.append({"delta": float(dl), "sign": sign, "statistic": "stderr", "value": float(se[j, c])})
            rows.append({"delta": float(dl), "sign": sign, "statistic": "pathwise", "value": float(acc.pmax[j, c])})
    fit = _fit(delta, value[:, 2])
    by_sign = {"+": _fit(delta, value[:, 0]), "-": _fit(delta, value[:, 1])}
    fit = dict(fit or {"slope": None, "intercept": None, "r_squared": None}, by_sign=by_sign)
    exact = bool(np.all(value[:, 2] <= EXACT_FLOOR))
    return fit, rows, exact


def target_slope(cfg: ExperimentConfig) -> float:
    """Expected exponent: ``(m + 1) / 2``, or 1 for the symmetrized second-order variant."""
    return 1.0 if cfg.variant == "symmetric" else (cfg.m + 1) / 2


def run_scaling(cfg: ExperimentConfig) -> ScalingReport:
    """Remainder statistic per ``delta`` and its log-log regression."""
    cfg = dataclasses.replace(cfg, experiment="scaling").validate()
    if cfg.functional == "catalog":
        raise ConfigurationError("scaling runs take a single functional")
    if cfg.field_mode and cfg.variant != "full":
        raise ConfigurationError("field scans use the full expansion")
    stride = cfg.scan_stride()
    acc, steps = _collect(cfg, cfg.M, stride, cfg.window_points)
    fit, rows, exact = _scaling_fit(cfg, acc, steps)
    target = target_slope(cfg)
    slope = fit["slope"]
    passed = exact or (slope is not None and abs(slope - target) <= cfg.slope_band)
    check = None
    if cfg.stride_check:
        check = stride_stability(cfg, slope if cfg.M <= cfg.stride_check_paths else None)
    return ScalingReport(
        experiment=cfg.experiment,
        functional=cfg.functional,
        variant=cfg.variant,
        m=cfg.m,
        alpha=cfg.alpha,
        p=cfg.p,
        seed=cfg.seed,
        rows=rows,
        fit=fit,
        pathwise_max=float(acc.pmax[:, -1].max() if not cfg.field_mode else acc.pmax.max()),
        target_slope=target,
        slope_band=cfg.slope_band,
        exact=exact,
        passed=bool(passed),
        stride_check=check,
        provenance=provenance(cfg),
    )


def stride_stability(cfg: ExperimentConfig, slope_full: float | None = None) -> dict:
    """Refit on a path subset with the scan stride halved (and window points doubled)."""
    M = min(cfg.M, cfg.stride_check_paths)
    stride = cfg.scan_stride()
    half, points = max(1, stride // 2), 2 * cfg.window_points
    if slope_full is None:
        acc, steps = _collect(cfg, M, stride, cfg.window_points)
        slope_full = _scaling_fit(cfg, acc, steps)[0]["slope"]
    acc, steps = _collect(cfg, M, half, points)
    slope_half = _scaling_fit(cfg, acc, steps)[0]["slope"]
    if slope_full is None or slope_half is None:
        return {"paths": M, "stride": stride, "half_stride": half, "slope": slope_full,
                "slope_half": slope_half, "difference": 0.0, "stable": slope_full == slope_half}
    diff = abs(slope_full - slope_half)
    return {"paths": M, "stride": stride, "half_stride": half, "slope": slope_full, "slope_half": slope_half,
            "difference": diff, "stable": bool(diff <= STRIDE_TOLERANCE)}


# ---------------------------------------------------------------------------
# identity suite


@dataclass
class IdentityReport:
    checks: list
    provenance: dict

    @property
    def passed(self) -> bool:
        return all(c["passed"] is not False for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if c["passed"] is False]

    def to_json(self) -> str:
        return _dumps({"checks": self.checks, "passed": self.passed, "provenance": self.provenance})

    def write(self, out: str | Path) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"identities_{_slug(self.provenance['config']['functional'])}.json"
        path.write_text(self.to_json())
        return path


def _check(name, kind, passed, worst, tolerance, functional=None, **detail) -> dict:
    out = {"name": name, "kind": kind, "functional": functional, "passed": passed,
           "worst": None if worst is None else float(worst), "tolerance": tolerance}
    out.update(detail)
    return out


def _rel(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(1.0, np.abs(np.asarray(b)))


def _catalog(cfg: ExperimentConfig) -> tuple[list, list]:
    if cfg.functional == "catalog":
        return list(FUNCTIONAL_NAMES), list(FIELD_NAMES)
    if cfg.field_mode:
        return [], [cfg.functional]
    return [cfg.functional], []


def _node_pairs(N: int) -> list:
    return [(0, N), (N // 4, 3 * N // 4), (3 * N // 4, N // 4), (N // 2, N // 2 + max(1, N // 64)), (N, 0)]


def shuffle_errors(w: np.ndarray, dt: float, pairs) -> float:
    """Worst ``|S + S^T - B B^T| / (1 + |B|^2)`` over paths and node pairs."""
    d = w.shape[-2]
    worst = 0.0
    for a, b in pairs:
        B = w[..., b] - w[..., a]
        S = np.stack([np.stack([signed_values((i + 1, j + 1), w, dt, a, b) for j in range(d)], -1)
                      for i in range(d)], -2)
        lhs = S + np.swapaxes(S, -1, -2) - B[..., :, None] * B[..., None, :]
        scale = 1.0 + np.sum(B * B, axis=-1)
        worst = max(worst, float(np.max(np.abs(lhs).max(axis=(-1, -2)) / scale)))
    return worst


def square_errors(w: np.ndarray, dt: float, pairs) -> float:
    """Worst ``|S - B^2/2|`` relative to ``max_r |B_{a,r}|^2 / 2`` on ``[a, b]``."""
    worst = 0.0
    for a, b in pairs:
        S = signed_values((1, 1), w, dt, a, b)
        B = w[..., 0, b] - w[..., 0, a]
        lo, hi = min(a, b), max(a, b)
        ref = w[..., 0, lo : hi + 1] - w[..., 0, a : a + 1]
        scale = np.maximum(0.5 * np.max(ref * ref, axis=-1), np.finfo(float).tiny)
        worst = max(worst, float(np.max(np.abs(S - 0.5 * B * B) / scale)))
    return worst


def forward_backward_errors(u: PathFunctional, path: SamplePath, k: int, L: int) -> float:
    """Backward expansion term by term: signed-index form against the matrix form
    built from the forward increment and the transposed forward second level."""
    grid = path.grid
    q = ExpansionQuery(k * grid.dt, -L * grid.dt, 2)
    res = expand(u, path, q)
    w = path.values
    sig = step2_signature(path, (k - L) * grid.dt, k * grid.dt)
    B = -sig.increment
    S = sig.second_level.T
    worst = 0.0
    for idx, term in res.terms.items():
        th = idx.theta.entries
        if th == ():
            ref = float(u.values_at(k, w, grid))
        elif th == (0,):
            ref = float(u.derivative_at((0,), k, w, grid, "left")) * (-L * grid.dt)
        elif len(th) == 1:
            ref = float(u.derivative_at(th, k, w, grid, "left")) * B[th[0] - 1]
        elif 0 not in th and len(th) == 2:
            ref = float(u.derivative_at(th, k, w, grid, "left")) * S[th[0] - 1, th[1] - 1]
        else:
            continue
        worst = max(worst, float(_rel(term.value, ref)))
    return worst


def _exact_checks(cfg: ExperimentConfig, names: list) -> list:
    grid = cfg.grid
    N, dt = cfg.N, grid.dt
    pairs = _node_pairs(N)
    checks = []
    w2 = simulate_ensemble(grid, 2, cfg.M, cfg.seed, 0)
    err = shuffle_errors(w2, dt, pairs)
    checks.append(_check("shuffle", "exact", err <= 1e-10, err, 1e-10, paths=cfg.M, d=2))
    w1 = simulate_ensemble(grid, 1, cfg.M, cfg.seed, 0)
    err = square_errors(w1, dt, pairs)
    checks.append(_check("square_d1", "exact", err <= 1e-12, err, 1e-12, paths=cfg.M, d=1))

    n_paths = min(cfg.M, cfg.exact_paths)
    k, L = (3 * N) // 4, max(MIN_DELTA_STEPS, N // 8)
    fb_names = [n for n in names if get_functional(n).d == 2] or ["markovian:sin2"]
    for name in fb_names:
        u = get_functional(name)
        worst = 0.0
        for i in range(n_paths):
            path = SamplePath(grid, w2[i], seed=cfg.seed, stream=i)
            worst = max(worst, forward_backward_errors(u, path, k, L))
        checks.append(_check("forward_backward", "exact", worst <= 1e-12, worst, 1e-12, name, paths=n_paths))

    for name in names:
        u = get_functional(name)
        w = simulate_ensemble(grid, u.d, n_paths, cfg.seed, 0)
        table = IteratedTable(w, dt)
        worst_def, worst_back = 0.0, 0.0
        for m in range(min(3, u.order + 1)):
            scan = remainder_scan(u, w, grid, np.array([k]), np.array([L, -L]), m, "full", table)[m][:, 0, :]
            for s, sign in enumerate((1, -1)):
                direct = definitional_values(u, w, grid, k, sign * L, m)
                worst_def = max(worst_def, float(np.max(_rel(scan[:, s], direct))))
            if u.order >= m + 1:
                back = representation_values(u, w, grid, k, -L, m, "hoelder")
                direct = definitional_values(u, w, grid, k, -L, m)
                worst_back = max(worst_back, float(np.max(_rel(back, direct))))
        checks.append(_check("definitional_remainder", "exact", worst_def <= 1e-10, worst_def, 1e-10, name, paths=n_paths))
        checks.append(_check("backward_hoelder_representation", "exact", worst_back <= 1e-10, worst_back, 1e-10,
                             name, paths=n_paths))

    w1s = simulate_ensemble(grid, 1, n_paths, cfg.seed, 0)
    probes_t = [0.25 * cfg.T, 0.5 * cfg.T, 0.75 * cfg.T]
    probes_x = [-1.0, 0.0, 0.3, 1.0]
    for case in SPDE_CASES:
        coeffs, field_u = get_spde_case(case)
        worst_route, failure = 0.0, None
        for i in range(n_paths):
            path = SamplePath(grid, w1s[i], seed=cfg.seed, stream=i)
            for t in probes_t:
                for x in probes_x:
                    worst_route = max(worst_route, max(route_errors(coeffs, field_u, t, [x], path).values()))
                    try:
                        six_tuple(coeffs, field_u, t, [x], path)
                    except ConsistencyError as exc:
                        failure = str(exc)
        checks.append(_check("route_equivalence", "exact", worst_route <= 1e-10, worst_route, 1e-10, case, paths=n_paths))
        checks.append(_check("six_tuple", "exact", failure is None, None, 1e-10, case, paths=n_paths, error=failure))

    for name in ("field:quadratic",):
        u = get_field(name)
        worst = 0.0
        for i in range(min(n_paths, 20)):
            path = SamplePath(grid, w1s[i], seed=cfg.seed, stream=i)
            for m in (1, 2):
                for sign in (1, -1):
                    q = ExpansionQuery(0.5 * cfg.T, sign * L * dt, m, (0.3,), (0.7,))
                    worst = max(worst, abs(field_remainder_recursion_residual(u, path, q, quad_order=4)))
        checks.append(_check("field_recursion_polynomial", "exact", worst <= 1e-10, worst, 1e-10, name))
    return checks


# bump-and-difference derivatives resolve nothing below this level
FD_FLOOR = 1e-9


def _order_check(name, functional, coarse, fine, factor, floor=EXACT_FLOOR, **detail) -> dict:
    r = refinement_order(coarse, fine, factor, floor)
    return _check(name, "refinement", r.passes(0.9), fine, "order >= 0.9", functional,
                  coarse=r.coarse, fine=r.fine, order=r.order, exact=r.exact, floor=floor, **detail)


def chain_rule_arguments(d: int) -> dict:
    """Composite arguments ``X`` used for the chain-rule check on ``d``-dimensional paths."""
    out = {
        "identity": [MarkovianFunctional("w1", d, name="markovian:identity")],
        "constant": [ConstantFunctional(0.3, d)],
    }
    if d == 1:
        out["drift"] = [DriftOfPath()]
    return out


def _refinement_checks(cfg: ExperimentConfig, names: list, fields: list) -> list:
    f = cfg.refine_factor
    coarse_grid = TimeGrid(cfg.T, cfg.refine_N)
    fine_grid = coarse_grid.refined(f)
    checks = []
    ensembles = {}

    def pair(d):
        if d not in ensembles:
            wc = simulate_ensemble(coarse_grid, d, cfg.refine_paths, cfg.seed, 0)
            ensembles[d] = (wc, refine_ensemble(wc, coarse_grid, cfg.seed, f))
        return ensembles[d]

    n = cfg.refine_N
    k = (3 * n) // 4
    L = n // 8
    for name in names:
        u = get_functional(name)
        wc, wf = pair(u.d)
        if u.order >= 2:
            ec = rms(ito_residual_values(u, wc, coarse_grid, n))
            ef = rms(ito_residual_values(u, wf, fine_grid, n * f))
            checks.append(_order_check("functional_ito", name, ec, ef, f))
        for m in range(3):
            for variant, need in (("full", m + 2), ("hoelder", m + 1)):
                if u.order < need:
                    continue
                for sign in (1, -1):
                    errs = []
                    for w, g, scale in ((wc, coarse_grid, 1), (wf, fine_grid, f)):
                        kk, LL = k * scale, sign * L * scale
                        rep = representation_values(u, w, g, kk, LL, m, variant)
                        errs.append(rms(definitional_values(u, w, g, kk, LL, m) - rep))
                    checks.append(_order_check("representation", name, errs[0], errs[1], f,
                                               variant=variant, m=m, sign=sign))

    wc, wf = pair(1)
    n_paths = min(cfg.refine_paths, cfg.exact_paths)
    errs = []
    for w, g in ((wc, coarse_grid), (wf, fine_grid)):
        vals = []
        for i in range(n_paths):
            path = SamplePath(g, w[i], seed=cfg.seed, stream=i)
            phi = np.cos(w[i, 0])
            vals.append(ibp_identity_residual((1, 0, 1), phi, path, 0.25 * cfg.T, 0.75 * cfg.T))
        errs.append(rms(vals))
    checks.append(_order_check("integration_by_parts", None, errs[0], errs[1], f, theta="(1,0,1)", integrand="cos(B)"))

    for name in fields:
        u = get_field(name)
        wc_u, wf_u = pair(u.d)
        for label, X in chain_rule_arguments(u.d).items():
            errs_t, errs_w = [], []
            for w, g, scale in ((wc_u, coarse_grid, 1), (wf_u, fine_grid, f)):
                rt, rw = chain_rule_values(u, X, w, g, (n // 2) * scale)
                errs_t.append(rms(rt))
                errs_w.append(rms(rw))
            checks.append(_order_check("chain_rule_time", name, errs_t[0], errs_t[1], f, FD_FLOOR, argument=label))
            checks.append(_order_check("chain_rule_path", name, errs_w[0], errs_w[1], f, FD_FLOOR, argument=label))

    if "transport:sin" in fields or cfg.functional == "catalog":
        u = get_field("transport:sin")
        path = SamplePath(coarse_grid, wc[0], seed=cfg.seed, stream=0)
        q = ExpansionQuery(0.5 * cfg.T, L * coarse_grid.dt, 2, (0.3,), (0.7,))
        res = [abs(field_remainder_recursion_residual(u, path, q, quad_order=o)) for o in (1, 2, 4)]
        dec = all(b < a for a, b in zip(res, res[1:])) or max(res[1:]) <= 1e-12
        checks.append(_check("field_recursion_quadrature", "refinement", dec, res[-1], "decreasing in quadrature order",
                             "transport:sin", residuals=res, orders=[1, 2, 4]))
    return checks


def _statistical_checks(cfg: ExperimentConfig) -> list:
    if cfg.M < MIN_STATISTICAL_PATHS:
        return [_check("scaling", "statistical", None, None, None, cfg.functional, status="skipped",
                       reason=f"M < {MIN_STATISTICAL_PATHS}")]
    base = dict(experiment="scaling", stride_check=False)
    if cfg.symmetric_check or cfg.functional == "area":
        full = run_scaling(cfg.replace(functional="area", variant="full", m=2, **base))
        sym = run_scaling(cfg.replace(functional="area", variant="symmetric", m=2, **base))
        return [levy_area_check(full, sym)]
    if cfg.functional == "catalog":
        return []
    rep = run_scaling(cfg.replace(**base))
    return [_check("scaling", "statistical", rep.passed, rep.fit["slope"], f"{rep.target_slope} +/- {rep.slope_band}",
                   cfg.functional, m=cfg.m, exact=rep.exact)]


def levy_area_check(full: ScalingReport, sym: ScalingReport, lo: float = 1.35, hi: float = 1.15, gap: float = 0.3) -> dict:
    """Full expansion slope ``>= lo``, symmetrized slope ``<= hi`` and gap ``>= gap``.

    An identically vanishing full remainder meets any rate and counts as an
    infinite slope.
    """
    fs = math.inf if full.exact else full.fit["slope"]
    ss = math.inf if sym.exact else sym.fit["slope"]
    ok = fs is not None and ss is not None and fs >= lo and ss <= hi and fs - ss >= gap
    return _check("levy_area_necessity", "statistical", bool(ok), None, {"full_min": lo, "symmetric_max": hi, "gap": gap},
                  full.functional, full_slope=None if full.exact else fs, full_exact=full.exact,
                  symmetric_slope=ss, gap=fs - ss if fs is not None and ss is not None else None)


def run_identity_suite(cfg: ExperimentConfig) -> IdentityReport:
    """Machine-precision, refinement-order and (when ``M >= 100``) statistical checks."""
    cfg = dataclasses.replace(cfg, experiment="identities").validate()
    names, fields = _catalog(cfg)
    checks = _exact_checks(cfg, names)
    checks += _refinement_checks(cfg, names, fields or (["transport:sin"] if names else []))
    checks += _statistical_checks(cfg)
    return IdentityReport(checks, provenance(cfg))


# ---------------------------------------------------------------------------
# norms


@dataclass
class NormReport:
    terms: list
    norm: float
    stderr: float
    hoelder: float
    hoelder_stderr: float
    provenance: dict

    def to_json(self) -> str:
        return _dumps({"norm": self.norm, "stderr": self.stderr, "hoelder_seminorm": self.hoelder,
                       "hoelder_stderr": self.hoelder_stderr, "terms": self.terms, "provenance": self.provenance})

    def write(self, out: str | Path) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"norms_{_slug(self.provenance['config']['functional'])}.json"
        path.write_text(self.to_json())
        return path


def norm_words(n: int, d: int) -> list:
    """Derivative words entering ``||u||_{n,p,T}``, with multiplicity.

    ``n = 0`` gives ``()``; ``n = 1`` adds ``(i,)``; ``n >= 2`` expands
    ``u``, ``d_t u`` at ``n - 2`` and every ``d_{omega^i} u`` at ``n - 1``.
    """
    if n <= 0:
        return [()]
    words = [()]
    if n >= 2:
        words += [(0,) + w for w in norm_words(n - 2, d)]
    for i in range(1, d + 1):
        words += [(i,) + w for w in norm_words(n - 1, d)]
    return words


def _time_nodes(N: int, count: int) -> np.ndarray:
    return np.unique(np.round(np.linspace(0, N, min(N, count) + 1)).astype(int))


def moment_sup(samples: np.ndarray, p: float) -> tuple[float, float, int]:
    """``sup_t (E|X_t|^p)^(1/p)`` over the columns of ``samples`` (paths x times),
    with the delta-method error at the maximizing time."""
    mom = np.mean(np.abs(samples) ** p, axis=0)
    j = int(np.argmax(mom))
    mean = mom[j]
    if mean <= 0:
        return 0.0, 0.0, j
    col = np.abs(samples[:, j]) ** p
    se_mean = float(np.std(col, ddof=1) / math.sqrt(col.size)) if col.size > 1 else 0.0
    value = mean ** (1 / p)
    return float(value), float(value / (p * mean) * se_mean), j


def hoelder_seminorm(samples: np.ndarray, times: np.ndarray, alpha: float, p: float) -> tuple[float, float]:
    """``E[sup_{s<t} |X_t - X_s|^p / (t - s)^(p alpha / 2)]^(1/p)`` over grid pairs."""
    P, n = samples.shape
    sup = np.zeros(P)
    for lag in range(1, n):
        diff = np.abs(samples[:, lag:] - samples[:, :-lag])
        gap = times[lag:] - times[:-lag]
        sup = np.maximum(sup, np.max(diff / gap ** (alpha / 2), axis=1))
    vals = sup**p
    mean = float(np.mean(vals))
    if mean <= 0:
        return 0.0, 0.0
    se = float(np.std(vals, ddof=1) / math.sqrt(P)) if P > 1 else 0.0
    value = mean ** (1 / p)
    return value, value / (p * mean) * se


def estimate_norms(cfg: ExperimentConfig, u: PathFunctional | None = None) -> NormReport:
    """Monte Carlo ``||u||_{n,p,T}`` with the Hoelder seminorm of ``u`` itself."""
    cfg = dataclasses.replace(cfg, experiment="norms").validate()
    u = u if u is not None else get_functional(cfg.functional)
    grid = cfg.grid
    nodes = _time_nodes(cfg.N, cfg.norm_times)
    words = norm_words(cfg.norm_order, u.d)
    distinct = sorted(set(words), key=lambda w: (len(w), w))
    for w_ in distinct:
        u.check(w_)

    def work(start, P):
        w = simulate_ensemble(grid, u.d, P, cfg.seed, start)
        return {th: np.asarray(np.broadcast_to(u.derivative_at(th, nodes, w, grid), (P, nodes.size)), float)
                for th in distinct}

    parts = _map_chunks(cfg, work)
    samples = {th: np.concatenate([part[th] for part in parts], axis=0) for th in distinct}
    terms, total, var = [], 0.0, 0.0
    for th in distinct:
        count = words.count(th)
        value, se, j = moment_sup(samples[th], cfg.p)
        terms.append({"word": list(th), "multiplicity": count, "value": value, "stderr": se,
                      "argmax_time": float(nodes[j] * grid.dt)})
        total += count * value
        var += (count * se) ** 2
    h, hse = hoelder_seminorm(samples[()], nodes * grid.dt, cfg.alpha, cfg.p)
    return NormReport(terms, total, math.sqrt(var), h, hse, provenance(cfg))
