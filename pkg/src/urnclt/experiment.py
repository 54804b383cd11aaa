"""Experiment configuration, orchestration, persistence and plot-data reports.

A run directory holds::

    config.json      canonical resolved config (its sha256 is the config hash)
    statistics.csv   replication_id, n, color, C_n, D_n, W_n, a_stat .. d_stat,
                     v_tail, v_cesaro, n_over_S
    terminal.csv     replication_id, color, z_proxy
    variance.csv     replication_id, i, j, U, V  (limit variances at the proxy)
    path_checks.csv  per-path bound and normalization checks (Poisson-Dirichlet only)
    tests.json       one report per requested test
    manifest.json    hash, version, timestamps, pass/fail, file inventory
    trajectories/    optional checkpoint dumps of the first paths

Every float is written with ``repr`` (shortest round-trip), so reruns with
the same config are byte-identical whatever the thread count.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import __version__
from .ensemble import Ensemble, build_ensemble
from .errors import ConfigError, InvariantViolation, LawError
from .limits import (atomlessness_diag, covariance_vs_mean_v, joint_product_test, median_ratio,
                     quantile_slices, studentized_test)
from .pd import PDConfig, pd_bound_check
from .schedule import TABLE_SIZE, ColorSchedule, ReinforcementLaw, ReinforcementSchedule, validate_schedule
from .urn import MultiColorConfig, TwoColorConfig, _resolve_checkpoints

MODELS = ("two_color", "multicolor", "poisson_dirichlet")
STATISTICS = ("C", "D", "W", "a_stat", "b_stat", "c_stat", "d_stat", "v_tail", "v_cesaro", "n_over_s")
STORAGE = ("dense", "checkpoint")
COLUMNS = {"C": "C_n", "D": "D_n", "W": "W_n", "n_over_s": "n_over_S"}


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


# -- config -----------------------------------------------------------------


def parse_law(spec, where: str) -> ReinforcementLaw:
    """Law from a number (constant) or a ``{"kind": ...}`` object."""
    try:
        if isinstance(spec, (int, float)) and not isinstance(spec, bool):
            return ReinforcementLaw.constant(spec)
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ConfigError("law must be a number or an object with a 'kind'", where)
        kind = spec["kind"]
        decl = {k: spec[k] for k in ("mean", "second_moment") if k in spec}
        if kind == "constant":
            return ReinforcementLaw.constant(spec["value"])
        if kind == "discrete":
            return ReinforcementLaw.discrete(spec["values"], spec["probs"], **decl)
        if kind == "uniform":
            lo, hi = float(spec["low"]), float(spec["high"])
            if not 0 <= lo <= hi:
                raise ConfigError("uniform law needs 0 <= low <= high", where)
            return ReinforcementLaw.from_quantile_table(np.linspace(lo, hi, TABLE_SIZE), **decl)
        if kind == "table":
            return ReinforcementLaw.from_quantile_table(spec["quantiles"], **decl)
        raise ConfigError(f"unknown law kind {kind!r}", where)
    except LawError as exc:
        raise ConfigError(str(exc), where) from None
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}", where) from None


def parse_color(spec, where: str) -> ColorSchedule:
    if isinstance(spec, dict) and "tail" in spec:
        early = {}
        for k, law in spec.get("early", {}).items():
            try:
                n = int(k)
            except ValueError:
                raise ConfigError(f"early time index {k!r} is not an integer", where) from None
            early[n] = parse_law(law, f"{where}.early.{k}")
        return ColorSchedule(parse_law(spec["tail"], f"{where}.tail"), early)
    return ColorSchedule(parse_law(spec, where))


@dataclass
class ExperimentConfig:
    model: str
    params: dict
    replications: int
    horizon: int
    checkpoints: list[int]
    master_seed: int
    statistics: list[str] = field(default_factory=lambda: list(STATISTICS))
    tests: list[dict] = field(default_factory=list)
    output: str = "runs/out"
    storage: str = "dense"
    dump_trajectories: int = 0

    def to_dict(self) -> dict:
        return {
            "model": self.model, "params": self.params, "replications": self.replications,
            "horizon": self.horizon, "checkpoints": self.checkpoints, "master_seed": self.master_seed,
            "statistics": self.statistics, "tests": self.tests, "output": self.output,
            "storage": self.storage, "dump_trajectories": self.dump_trajectories,
        }

    def canonical_json(self) -> str:
        return _dump_json(self.to_dict())

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _int(d, key, minimum=None, required=True, default=None):
    if key not in d:
        if required:
            raise ConfigError("missing required field", key)
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"must be an integer, got {v!r}", key)
    if minimum is not None and v < minimum:
        raise ConfigError(f"must be >= {minimum}, got {v}", key)
    return v


def parse_config(raw: dict, seed: int | None = None, output: str | None = None) -> ExperimentConfig:
    """Validate a raw JSON config; raises :class:`ConfigError` naming the offending field."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", "config")
    known = set(ExperimentConfig.__dataclass_fields__)
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown fields {sorted(extra)}", sorted(extra)[0])
    model = raw.get("model")
    if model not in MODELS:
        raise ConfigError(f"must be one of {MODELS}, got {model!r}", "model")
    R = _int(raw, "replications", 1)
    N = _int(raw, "horizon", 1)
    master_seed = seed if seed is not None else _int(raw, "master_seed", 0)
    if not 0 <= master_seed < 2**64:
        raise ConfigError("must be an unsigned 64-bit integer", "master_seed")
    cps = list(_resolve_checkpoints(raw.get("checkpoints"), N))
    statistics = list(raw.get("statistics", STATISTICS))
    bad = [s for s in statistics if s not in STATISTICS]
    if bad:
        raise ConfigError(f"unknown statistics {bad}", "statistics")
    storage = raw.get("storage", "dense")
    if storage not in STORAGE:
        raise ConfigError(f"must be one of {STORAGE}", "storage")
    tests = raw.get("tests", [])
    if not isinstance(tests, list):
        raise ConfigError("must be a list", "tests")
    tests = [_check_test(t, i, cps, storage) for i, t in enumerate(tests)]
    cfg = ExperimentConfig(
        model=model, params=raw.get("params", {}), replications=R, horizon=N, checkpoints=cps,
        master_seed=master_seed, statistics=statistics, tests=tests,
        output=output if output is not None else raw.get("output", "runs/out"),
        storage=storage, dump_trajectories=_int(raw, "dump_trajectories", 0, required=False, default=0),
    )
    build_model(cfg)
    return cfg


def build_model(cfg: ExperimentConfig):
    """Model config object (two-color, multicolor or Poisson-Dirichlet) for an experiment."""
    p = cfg.params
    if not isinstance(p, dict):
        raise ConfigError("must be an object", "params")
    try:
        if cfg.model == "poisson_dirichlet":
            nu = p.get("nu")
            if nu is None:
                k = p.get("symbols")
                if not isinstance(k, int) or k < 2:
                    raise ConfigError("give 'nu' or an integer 'symbols' >= 2", "params.nu")
                nu = [1.0 / k] * k
            try:
                return PDConfig(float(p["alpha"]), float(p["theta"]), tuple(nu), tuple(p.get("target", [0])),
                                cfg.horizon, tuple(cfg.checkpoints))
            except ConfigError as exc:
                raise ConfigError(str(exc).split(": ", 1)[-1], f"params.{exc.field}") from None
        kw = {"pairing": p.get("pairing", "independent"), "moment_exponent": float(p.get("moment_exponent", 3.0))}
        if cfg.model == "two_color":
            colors = (parse_color(p.get("black"), "params.black"), parse_color(p.get("red"), "params.red"))
            sched = ReinforcementSchedule(colors, **kw)
            _check_schedule(sched, ("black", "red"))
            try:
                return TwoColorConfig(float(p["b"]), float(p["r"]), sched, cfg.horizon, cfg.checkpoints)
            except ConfigError as exc:
                raise ConfigError(str(exc).split(": ", 1)[-1], f"params.{exc.field}") from None
        colors = p.get("colors")
        if not isinstance(colors, list):
            raise ConfigError("must be a list of color schedules", "params.colors")
        sched = ReinforcementSchedule(tuple(parse_color(c, f"params.colors.{j}") for j, c in enumerate(colors)), **kw)
        _check_schedule(sched)
        return MultiColorConfig(tuple(p.get("weights", ())), sched, cfg.horizon, tuple(cfg.checkpoints))
    except KeyError as exc:
        raise ConfigError("missing required field", f"params.{exc.args[0]}") from None


def _check_schedule(sched, names=None):
    v = validate_schedule(sched)
    if v:
        first = v[0]
        if first.color is None:
            where = "params"
        else:
            where = f"params.{names[first.color]}" if names else f"params.colors.{first.color}"
        raise ConfigError("; ".join(x.message for x in v), where)


# -- tests ------------------------------------------------------------------

TESTS = ("studentized", "joint_product", "magnitude", "pd_bound", "n_over_s", "median_ratio",
         "covariance", "row_sums", "v_estimators", "atomlessness")
_DENSE_ONLY = {"median_ratio", "v_estimators"}


def _check_test(t, i, cps, storage):
    where = f"tests.{i}"
    if isinstance(t, str):
        t = {"name": t}
    if not isinstance(t, dict) or t.get("name") not in TESTS:
        raise ConfigError(f"test must name one of {TESTS}", where)
    if "n" in t and t["n"] not in cps:
        raise ConfigError(f"n={t['n']} is not a checkpoint", f"{where}.n")
    if t["name"] in _DENSE_ONLY and storage != "dense":
        raise ConfigError(f"{t['name']} needs dense storage", where)
    return dict(t)


def _last_proxy_n(ens: Ensemble) -> int:
    """Largest checkpoint at which ``D_n`` is defined on every replication."""
    ok = [int(n) for n in ens.checkpoints if np.all(np.isfinite(ens.column("D", int(n))))]
    if not ok:
        raise ValueError("no checkpoint has a defined D_n (horizon too short for the Z proxy)")
    return ok[-1]


def run_test(spec: dict, ens: Ensemble, seed: int, path_checks=None) -> dict:
    """Evaluate one registered test on an ensemble; returns a JSON-ready report with ``overall_pass``."""
    name = spec["name"]
    n = spec.get("n")
    color = spec.get("color")
    if name == "studentized":
        rep = studentized_test(ens, n, spec.get("statistic", "D"), color, spec.get("slices", 8),
                               spec.get("alpha", 0.01), spec.get("min_count", 200), spec.get("magnitude_bound"))
        return rep.to_dict()
    if name == "joint_product":
        rep = joint_product_test(ens, n, color, spec.get("slices", 8), spec.get("alpha", 0.01),
                                 spec.get("min_count", 200), spec.get("permutations", 1999), seed)
        return rep.to_dict()
    if name == "magnitude":
        stat = spec.get("statistic", "C")
        q = float(np.quantile(np.abs(ens.column(stat, n, color)), spec.get("quantile", 0.95)))
        bound = spec.get("bound", 3.0 / math.sqrt(n))
        return {"name": name, "statistic": stat, "n": n, "quantile_value": q, "thresholds": {"bound": bound},
                "overall_pass": q < bound}
    if name == "pd_bound":
        if path_checks is None:
            raise InvariantViolation("pd_bound needs per-path checks (Poisson-Dirichlet runs only)")
        ok = [bool(r[1]) for r in path_checks]
        return {"name": name, "paths": len(ok), "violations": ok.count(False),
                "max_identity_residual": max(r[2] for r in path_checks),
                "max_q_mismatch": max(r[3] for r in path_checks),
                "max_c_over_bound": max(r[4] for r in path_checks),
                "max_normalization_error": max(r[5] for r in path_checks), "overall_pass": all(ok)}
    if name == "n_over_s":
        vals = ens.column("n_over_s", n, color)
        target = 1.0 / ens.m
        rel = np.abs(vals * ens.m - 1.0)
        rtol = spec.get("rtol", 0.01)
        return {"name": name, "n": n, "inverse_m": target, "mean": float(vals.mean()),
                "max_relative_error": float(rel.max()), "thresholds": {"rtol": rtol},
                "overall_pass": bool(rel.max() < rtol)}
    if name == "median_ratio":
        stat, which = spec.get("stat", "d_stat"), spec.get("variance", "V")
        ratio = median_ratio(ens, stat, n, which, color)
        rtol = spec.get("rtol", 0.15)
        return {"name": name, "stat": stat, "variance": which, "n": n, "median_ratio": ratio,
                "thresholds": {"rtol": rtol}, "overall_pass": abs(ratio - 1.0) < rtol}
    if name == "covariance":
        cov, mean_v = covariance_vs_mean_v(ens, n)
        d = cov.shape[0]
        diag_rel = np.abs(np.diag(cov) / np.diag(mean_v) - 1.0)
        off = ~np.eye(d, dtype=bool)
        off_abs = np.abs(cov - mean_v)[off]
        dr, oa = spec.get("diag_rtol", 0.15), spec.get("offdiag_atol", 0.02)
        return {"name": name, "n": n, "covariance": cov.tolist(), "mean_V": mean_v.tolist(),
                "max_diag_relative_error": float(diag_rel.max()), "max_offdiag_abs_error": float(off_abs.max()),
                "thresholds": {"diag_rtol": dr, "offdiag_atol": oa},
                "overall_pass": bool(diag_rel.max() < dr and off_abs.max() < oa)}
    if name == "row_sums":
        tol = spec.get("tol", 1e-10)
        if ens.scalar:
            return {"name": name, "overall_pass": True, "note": "scalar model"}
        err = max(float(np.abs(ens.V.sum(axis=2)).max()), float(np.abs(ens.U.sum(axis=2)).max()))
        return {"name": name, "max_abs_row_sum": err, "thresholds": {"tol": tol}, "overall_pass": err < tol}
    if name == "v_estimators":
        a, b = ens.column("v_tail", n, color), ens.column("d_stat", n, color)
        rel = float(np.max(np.abs(a / b - 1.0)))
        rtol = spec.get("rtol", 0.05)
        return {"name": name, "n": n, "max_relative_gap": rel, "thresholds": {"rtol": rtol},
                "overall_pass": rel < rtol}
    if name == "atomlessness":
        rep = atomlessness_diag(ens.z(color), spec.get("width", 1e-3), spec.get("soft_threshold", 0.01))
        return {"name": name, "max_mass": rep.max_mass, "location": rep.location, "flagged": rep.flagged,
                "overall_pass": True, "note": "diagnostic only"}
    raise ConfigError(f"unknown test {name!r}", "tests")


# -- run --------------------------------------------------------------------


@dataclass
class RunManifest:
    config_hash: str
    artifact_version: str
    started: str
    finished: str
    tests: list[dict]
    files: dict[str, str]

    @property
    def passed(self) -> bool:
        return all(t["pass"] for t in self.tests)

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "artifact_version": self.artifact_version,
                "started": self.started, "finished": self.finished, "tests": self.tests,
                "overall_pass": self.passed, "files": self.files}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _trajectory_rows(traj):
    """Header, then one row per checkpoint ``k`` (draw and reinforcement of step ``k``)."""
    if isinstance(traj.config, PDConfig):
        yield ["k", "symbol", "Z"]
        for i, k in enumerate(traj.checkpoints):
            yield [int(k), int(traj.symbols[k - 1]), traj.z[i]]
        return
    d = traj.d
    yield ["k", "color", "reinforcement", *[f"Z_{j + 1}" for j in range(d)], "S_k"]
    for i, k in enumerate(traj.checkpoints):
        yield [int(k), int(traj.draws[k - 1]), traj.reinforcements[k - 1], *traj.z[i], traj.s[i]]


def _write_trajectory(path: Path, traj) -> None:
    rows = _trajectory_rows(traj)
    header = next(rows)
    _write_csv(path, header, rows)


def simulate_ensemble(cfg: ExperimentConfig, threads: int | None = None, out: Path | None = None):
    """Build the ensemble for ``cfg``; returns ``(ensemble, path_checks or None)``."""
    model = build_model(cfg)
    checks = None
    traj_dir = None
    if out is not None and cfg.dump_trajectories:
        traj_dir = out / "trajectories"
        traj_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(model, PDConfig):
        checks = []

    def on_path(rep, traj):
        if checks is not None:
            try:
                r = pd_bound_check(traj, model)
                ok = True
            except InvariantViolation:
                r = pd_bound_check(traj, model, tol=math.inf)
                ok = False
            ratio = float(np.max(np.abs(r.c) / np.where(r.c_bound > 0, r.c_bound, np.inf)))
            checks.append((rep, ok, r.max_identity_residual, r.max_q_mismatch, ratio,
                           traj.max_normalization_error))
        if traj_dir is not None and rep < cfg.dump_trajectories:
            _write_trajectory(traj_dir / f"replication_{rep:06d}.csv", traj)

    dense = cfg.storage == "dense"
    ens = build_ensemble(model, cfg.replications, cfg.master_seed, threads=threads, dense=dense,
                         dump=cfg.replications if checks is not None else cfg.dump_trajectories,
                         on_dump=on_path)
    if cfg.storage != "dense":
        for name in ("a_stat", "b_stat", "c_stat", "d_stat", "v_tail", "v_cesaro"):
            setattr(ens, name, None)
    return ens, checks


def write_ensemble(out: Path, cfg: ExperimentConfig, ens: Ensemble) -> None:
    stats_cols = [s for s in STATISTICS if s in cfg.statistics and getattr(ens, s) is not None]
    d = 1 if ens.scalar else ens.C.shape[2]

    def col(name, i, k, j):
        arr = getattr(ens, name)
        return arr[i, k] if arr.ndim == 2 else arr[i, k, j]

    rows = ([i, int(n), j, *[col(s, i, k, j) for s in stats_cols]]
            for i in range(ens.R) for k, n in enumerate(ens.checkpoints) for j in range(d))
    _write_csv(out / "statistics.csv", ["replication_id", "n", "color", *[COLUMNS.get(c, c) for c in stats_cols]],
               rows)
    z = ens.z_proxy.reshape(ens.R, -1)
    _write_csv(out / "terminal.csv", ["replication_id", "color", "z_proxy"],
               ([i, j, z[i, j]] for i in range(ens.R) for j in range(z.shape[1])))
    U = ens.U.reshape(ens.R, d, d)
    V = ens.V.reshape(ens.R, d, d)
    _write_csv(out / "variance.csv", ["replication_id", "i", "j", "U", "V"],
               ([r, i, j, U[r, i, j], V[r, i, j]] for r in range(ens.R) for i in range(d) for j in range(d)))


def load_ensemble(run_dir: Path) -> tuple[ExperimentConfig, Ensemble, list | None]:
    """Rebuild an ensemble from stored run artifacts (raises FileNotFoundError when missing)."""
    run_dir = Path(run_dir)
    cfg = parse_config(json.loads((run_dir / "config.json").read_text()))
    model = build_model(cfg)
    st = np.genfromtxt(run_dir / "statistics.csv", delimiter=",", names=True)
    names = st.dtype.names
    R = cfg.replications
    K = len(cfg.checkpoints)
    d = 1 if model.__class__ is not MultiColorConfig else model.d
    scalar = d == 1

    def arr(name):
        name = COLUMNS.get(name, name)
        if name not in names:
            return None
        a = np.asarray(st[name], dtype=float).reshape(R, K, d)
        return a[:, :, 0] if scalar else a

    term = np.genfromtxt(run_dir / "terminal.csv", delimiter=",", names=True)
    z = np.asarray(term["z_proxy"], dtype=float).reshape(R, -1)
    var = np.genfromtxt(run_dir / "variance.csv", delimiter=",", names=True)
    U = np.asarray(var["U"], dtype=float).reshape(R, d, d)
    V = np.asarray(var["V"], dtype=float).reshape(R, d, d)
    if scalar:
        z, U, V = z[:, 0], U[:, 0, 0], V[:, 0, 0]
    n_over_s = arr("n_over_s")
    if n_over_s is not None and not scalar:
        n_over_s = n_over_s[:, :, 0]
    m = float("nan") if isinstance(model, PDConfig) else model.schedule.m
    ens = Ensemble(np.array(cfg.checkpoints), arr("C"), arr("D"), arr("W"), z, U, V, cfg.horizon,
                   arr("a_stat"), arr("b_stat"), arr("c_stat"), arr("d_stat"), arr("v_tail"), arr("v_cesaro"),
                   n_over_s, None, m, {"seed": cfg.master_seed, "replications": R})
    checks = None
    pc = run_dir / "path_checks.csv"
    if pc.exists():
        with open(pc) as fh:
            reader = csv.reader(fh)
            next(reader)
            checks = [(int(r[0]), r[1] == "1", *map(float, r[2:6])) for r in reader]
    return cfg, ens, checks


def run_tests(cfg: ExperimentConfig, ens: Ensemble, checks) -> list[dict]:
    reports = []
    for spec in cfg.tests:
        rep = run_test(spec, ens, cfg.master_seed, checks)
        rep["name"] = spec["name"]
        rep["spec"] = spec
        reports.append(rep)
    return reports


def _finish(out: Path, cfg: ExperimentConfig, reports: list[dict], started: str) -> RunManifest:
    (out / "tests.json").write_text(_dump_json({"seeds": [cfg.master_seed], "tests": reports}))
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json" and "report" not in p.relative_to(out).parts:
            files[str(p.relative_to(out))] = _sha256(p)
    summary = [{"name": r["name"], "n": r.get("n"), "pass": bool(r["overall_pass"])} for r in reports]
    manifest = RunManifest(_sha256(out / "config.json"), __version__, started, _now(), summary, files)
    (out / "manifest.json").write_text(_dump_json(manifest.to_dict()))
    return manifest


def run(cfg: ExperimentConfig, threads: int | None = None) -> RunManifest:
    """Simulate, persist and test one experiment; artifacts go to ``cfg.output``."""
    started = _now()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.canonical_json())
    ens, checks = simulate_ensemble(cfg, threads, out)
    write_ensemble(out, cfg, ens)
    if checks is not None:
        _write_csv(out / "path_checks.csv",
                   ["replication_id", "ok", "max_identity_residual", "max_q_mismatch", "max_c_over_bound",
                    "max_normalization_error"],
                   ([r[0], int(r[1]), *r[2:]] for r in checks))
    reports = run_tests(cfg, ens, checks)
    return _finish(out, cfg, reports, started)


def verify_stored(run_dir: Path, tests: list[dict] | None = None) -> RunManifest:
    """Re-run the test suite on stored artifacts (optionally a different test list)."""
    run_dir = Path(run_dir)
    started = _now()
    cfg, ens, checks = load_ensemble(run_dir)
    if tests is not None:
        cfg.tests = [_check_test(t, i, cfg.checkpoints, cfg.storage) for i, t in enumerate(tests)]
    reports = run_tests(cfg, ens, checks)
    return _finish(run_dir, cfg, reports, started)


# -- report -----------------------------------------------------------------

HIST_EDGES = np.linspace(-4.0, 4.0, 33)
QUANTILE_PROBS = np.linspace(0.01, 0.99, 99)


def report(run_dir: Path, n: int | None = None, color: int = 0, trajectories: int = 20) -> dict[str, Path]:
    """Write plot-ready CSVs under ``<run_dir>/report``; returns the files written.

    * ``histogram_W.csv``  slice, bin_left, bin_right, mass, normal_mass
    * ``quantiles_W.csv``  slice, p, empirical, normal
    * ``d_stat_vs_V.csv``  replication_id, n, d_stat, V   (dense runs only)
    * ``n_over_s.csv``     n, mean, q05, q95, inverse_m   (urn runs only)

    Studentized ``W_n`` uses ``U + V``; the two outer histogram bins are open
    so each slice's masses sum to one.
    """
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.json").exists():
        raise FileNotFoundError(f"no run artifacts in {run_dir}")
    cfg, ens, _ = load_ensemble(run_dir)
    rep = run_dir / "report"
    rep.mkdir(exist_ok=True)
    n = _last_proxy_n(ens) if n is None else n
    w, var, z = ens.select("W", n, None if ens.scalar else color)
    ok = var > 1e-10
    t = np.where(ok, w / np.sqrt(np.where(ok, var, 1.0)), np.nan)
    bins = quantile_slices(z, 8, 200)
    edges = HIST_EDGES.copy()
    cdf = sps.norm.cdf(edges)
    cdf[0], cdf[-1] = 0.0, 1.0
    normal_mass = np.diff(cdf)
    hist_rows, q_rows = [], []
    for b, idx in enumerate(bins):
        ts = t[idx][np.isfinite(t[idx])]
        if ts.size == 0:
            continue
        clipped = np.clip(ts, edges[0] + 1e-12, edges[-1] - 1e-12)
        counts, _ = np.histogram(clipped, edges)
        mass = counts / ts.size
        for i in range(mass.size):
            left = -math.inf if i == 0 else edges[i]
            right = math.inf if i == mass.size - 1 else edges[i + 1]
            hist_rows.append([b, left, right, mass[i], normal_mass[i]])
        emp = np.quantile(ts, QUANTILE_PROBS)
        q_rows += [[b, p, e, sps.norm.ppf(p)] for p, e in zip(QUANTILE_PROBS, emp)]
    files = {}
    files["histogram"] = rep / "histogram_W.csv"
    _write_csv(files["histogram"], ["slice", "bin_left", "bin_right", "mass", "normal_mass"], hist_rows)
    files["quantiles"] = rep / "quantiles_W.csv"
    _write_csv(files["quantiles"], ["slice", "p", "empirical", "normal"], q_rows)
    if ens.d_stat is not None:
        v = ens.variance("V", None if ens.scalar else color)
        files["d_stat"] = rep / "d_stat_vs_V.csv"
        _write_csv(files["d_stat"], ["replication_id", "n", "d_stat", "V"],
                   ([i, int(nn), ens.column("d_stat", int(nn), color)[i], v[i]]
                    for i in range(min(trajectories, ens.R)) for nn in ens.checkpoints))
    if ens.n_over_s is not None:
        files["n_over_s"] = rep / "n_over_s.csv"
        ns = ens.n_over_s
        _write_csv(files["n_over_s"], ["n", "mean", "q05", "q95", "inverse_m"],
                   ([int(nn), ns[:, k].mean(), np.quantile(ns[:, k], 0.05), np.quantile(ns[:, k], 0.95), 1 / ens.m]
                    for k, nn in enumerate(ens.checkpoints)))
    return files


def load_config_file(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", "config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "config") from None


def default_threads() -> int:
    return os.cpu_count() or 1
