"""Command line entry point: ``urnclt {simulate,verify,pd,report,oracle}``.

Exit codes: 0 success, 1 a requested test failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .errors import ConfigError
from .rng import StreamKey
from .urn import TwoColorConfig, MultiColorConfig, empirical_law, enumerate_exact, marginal, simulate, total_variation

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _common(p: argparse.ArgumentParser, config_required=True):
    p.add_argument("--config", required=config_required, help="experiment JSON config")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--seed", type=_u64, default=None, help="master seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urnclt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an ensemble, write artifacts, run configured tests")
    _common(p)

    p = sub.add_parser("verify", help="run the configured tests on a fresh or stored ensemble")
    _common(p, config_required=False)
    p.add_argument("--run", default=None, help="stored run directory to verify instead of simulating")

    p = sub.add_parser("pd", help="Poisson-Dirichlet preset with bound, C magnitude and D slice tests")
    _common(p, config_required=False)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--symbols", type=int, default=4)
    p.add_argument("--target", type=int, nargs="+", default=[0])
    p.add_argument("--replications", type=int, default=5000)
    p.add_argument("--horizon", type=int, default=200_000)
    p.add_argument("--n", type=int, default=2000)

    p = sub.add_parser("report", help="write plot-ready CSVs for a stored run")
    p.add_argument("run", help="run directory")
    p.add_argument("--n", type=int, default=None, help="checkpoint for the W histograms")
    p.add_argument("--color", type=int, default=0)

    p = sub.add_parser("oracle", help="compare simulated small-n laws of Z_n with exact enumeration")
    _common(p)
    p.add_argument("--n", type=int, nargs="+", default=[1, 2, 6])
    p.add_argument("--replications", type=int, default=100_000)
    p.add_argument("--tol", type=float, default=0.01)
    return parser


def _print_manifest(m: ex.RunManifest, out) -> int:
    for t in m.tests:
        n = "" if t["n"] is None else f" n={t['n']}"
        print(f"{'PASS' if t['pass'] else 'FAIL'} {t['name']}{n}")
    print(f"config {m.config_hash[:16]}  artifacts in {out}")
    return EXIT_OK if m.passed else EXIT_FAIL


def _load(args) -> ex.ExperimentConfig:
    return ex.parse_config(ex.load_config_file(args.config), seed=args.seed, output=args.out)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    return _print_manifest(ex.run(cfg, args.threads), cfg.output)


def cmd_verify(args) -> int:
    if args.run:
        return _print_manifest(ex.verify_stored(Path(args.run)), args.run)
    if not args.config:
        raise ConfigError("give --config or --run", "config")
    return cmd_simulate(args)


def pd_preset(args) -> dict:
    cps = sorted({args.n, args.horizon})
    return {
        "model": "poisson_dirichlet",
        "params": {"alpha": args.alpha, "theta": args.theta, "symbols": args.symbols, "target": args.target},
        "replications": args.replications, "horizon": args.horizon, "checkpoints": cps,
        "master_seed": 0 if args.seed is None else args.seed, "storage": "checkpoint",
        "output": args.out or "runs/pd",
        "tests": [{"name": "pd_bound"},
                  {"name": "magnitude", "statistic": "C", "n": args.n},
                  {"name": "studentized", "statistic": "D", "n": args.n}],
    }


def cmd_pd(args) -> int:
    raw = ex.load_config_file(args.config) if args.config else pd_preset(args)
    cfg = ex.parse_config(raw, seed=args.seed, output=args.out)
    if cfg.model != "poisson_dirichlet":
        raise ConfigError("pd needs a poisson_dirichlet model", "model")
    return _print_manifest(ex.run(cfg, args.threads), cfg.output)


def cmd_report(args) -> int:
    try:
        files = ex.report(Path(args.run), args.n, args.color)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for f in files.values():
        print(f)
    return EXIT_OK


def oracle_check(model, ns, replications: int, seed: int) -> dict[int, float]:
    """TV distance between simulated and enumerated laws of ``Z_n`` (color 0) for each ``n``."""
    ns = sorted(ns)
    sub = MultiColorConfig(model.weights, model.schedule, ns[-1], tuple(ns))
    if isinstance(model, TwoColorConfig):
        sub = TwoColorConfig(model.b, model.r, model.schedule, ns[-1], ns)
    zs = np.empty((replications, len(ns)))
    for i in range(replications):
        zs[i] = simulate(sub, StreamKey(seed, i), validate=(i == 0)).z[:, 0]
    out = {}
    for k, n in enumerate(ns):
        exact = marginal(enumerate_exact(sub, n), 0)
        if not isinstance(model, TwoColorConfig):
            exact = {z[0]: p for z, p in exact.items()}
        out[n] = total_variation(empirical_law(zs[:, k]), exact)
    return out


def cmd_oracle(args) -> int:
    cfg = _load(args)
    if cfg.model == "poisson_dirichlet":
        raise ConfigError("oracle enumeration is for urn models", "model")
    tv = oracle_check(ex.build_model(cfg), args.n, args.replications, cfg.master_seed)
    report = {"replications": args.replications, "tolerance": args.tol, "tv": {str(n): v for n, v in tv.items()},
              "overall_pass": all(v < args.tol for v in tv.values())}
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "oracle.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    for n, v in tv.items():
        print(f"{'PASS' if v < args.tol else 'FAIL'} oracle n={n} tv={v:.5f}")
    return EXIT_OK if report["overall_pass"] else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "pd": cmd_pd, "report": cmd_report,
            "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
