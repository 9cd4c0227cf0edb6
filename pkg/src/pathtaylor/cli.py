"""Command-line entry point.

Exit codes: 0 success, 1 failed identity or scaling band (with ``--strict``),
2 configuration error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .brownian import TimeGrid, simulate_path
from .errors import CapabilityError, ConfigurationError, QueryError
from .experiments import ExperimentConfig, estimate_norms, run_identity_suite, run_scaling
from .functionals import get_field, get_functional, is_field
from .taylor import ExpansionQuery, expand, expand_field

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

# command-line overrides that map straight onto config fields
_OVERRIDES = (("functional", str), ("m", int), ("M", int), ("N", int), ("variant", str), ("p", float))


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON file with ExperimentConfig fields")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--out", help="report directory (overrides the config)")
    parser.add_argument("--strict", action="store_true", help="exit 1 on any failed identity or band")
    parser.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    for name, typ in _OVERRIDES:
        parser.add_argument(f"--{name}", type=typ, dest=f"cfg_{name}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pathtaylor", description="Pathwise Taylor expansion experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("identities", "machine-precision, refinement and statistical identity checks"),
        ("scaling", "remainder scaling regression"),
        ("norms", "Monte Carlo norm estimates"),
    ):
        _common(sub.add_parser(name, help=text))
    ex = sub.add_parser("expand", help="print the term table of one expansion")
    ex.add_argument("--functional", default="markovian:sin")
    ex.add_argument("--t", type=float, default=0.5)
    ex.add_argument("--delta", type=float, default=0.125)
    ex.add_argument("--m", type=int, default=2)
    ex.add_argument("--x", type=float, nargs="*", help="base point for fields")
    ex.add_argument("--h", type=float, nargs="*", help="spatial offset for fields")
    ex.add_argument("--variant", default="full")
    ex.add_argument("--T", type=float, default=1.0)
    ex.add_argument("--N", type=int, default=1024)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--stream", type=int, default=0)
    return parser


def config_from_args(args, experiment: str) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    changes = {"experiment": experiment}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if args.threads is not None:
        changes["threads"] = args.threads
    for name, _ in _OVERRIDES:
        value = getattr(args, f"cfg_{name}")
        if value is not None:
            changes[name] = value
    return cfg.replace(**changes).validate()


def _print_expansion(res) -> None:
    print(f"{'index':<28}{'coefficient':>16}{'integral':>16}{'monomial':>12}{'term':>16}")
    for idx, term in res.terms.items():
        print(f"{str(idx):<28}{term.coefficient:>16.8e}{term.integral:>16.8e}{term.monomial:>12.4g}{term.value:>16.8e}")
    print(f"predicted {res.predicted:.12e}")
    print(f"actual    {res.actual:.12e}")
    print(f"remainder {res.remainder:.12e}")


def _run_expand(args) -> int:
    grid = TimeGrid(args.T, args.N)
    if is_field(args.functional):
        u = get_field(args.functional)
        path = simulate_path(grid, u.d, args.seed, args.stream)
        x = tuple(args.x) if args.x else (0.0,) * u.d_prime
        h = tuple(args.h) if args.h else (0.0,) * u.d_prime
        res = expand_field(u, path, ExpansionQuery(args.t, args.delta, args.m, x, h))
    else:
        u = get_functional(args.functional)
        path = simulate_path(grid, u.d, args.seed, args.stream)
        res = expand(u, path, ExpansionQuery(args.t, args.delta, args.m), args.variant)
    _print_expansion(res)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "expand":
            return _run_expand(args)
        cfg = config_from_args(args, args.command)
        if args.command == "identities":
            report = run_identity_suite(cfg)
            path = report.write(cfg.out)
            for c in report.checks:
                status = {True: "PASS", False: "FAIL", None: "SKIP"}[c["passed"]]
                print(f"{status} {c['name']} {c['functional'] or ''} worst={c['worst']}")
            print(f"report: {path}")
            failed = not report.passed
        elif args.command == "scaling":
            report = run_scaling(cfg)
            pj, pc = report.write(cfg.out)
            s = report.summary()
            print(f"slope={s['slope']} r_squared={s['r_squared']} exact={s['exact']} "
                  f"target={s['target_slope']}+/-{s['slope_band']} pass={report.passed}")
            print(f"reports: {pj} {pc}")
            failed = not report.passed
        else:
            report = estimate_norms(cfg)
            path = report.write(cfg.out)
            print(f"norm={report.norm} stderr={report.stderr} hoelder={report.hoelder} stderr={report.hoelder_stderr}")
            print(f"report: {path}")
            failed = False
    except (ConfigurationError, QueryError, CapabilityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_FAILED if (failed and args.strict) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
