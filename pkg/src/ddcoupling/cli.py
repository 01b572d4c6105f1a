"""Command-line front end.

Subcommands ``analyze``, ``couple``, ``simulate`` and ``experiment
{moddev,qsd,sirs-cost,threshold}``.  Values may come from a JSON config
file (``--config``); flags override file values.  ``--seed`` is always
required.  Every artifact is written atomically and accompanied by a
``<name>.meta.json`` file echoing the configuration.

Exit codes: 0 success, 1 invalid configuration or parameters, 2 runtime
failure, 3 failed ``--check``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import analysis, experiments, kmt, simulate
from ._backend import BACKEND
from .model import DomainError, Model, ModelError, load_model, make_catalog_model
from .rng import derive, map_replicas

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

COMMANDS = ("analyze", "couple", "simulate", "experiment")
VARIANTS = ("moddev", "qsd", "sirs-cost", "threshold")
EMITS = ("path", "gap", "summary")
PARAM_NAMES = ("p", "q", "lam", "gam", "theta")


class ConfigError(ValueError):
    """One or more configuration problems, reported together."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    """Validated run configuration.  ``None`` means "use the command's default"."""

    command: str
    variant: str | None = None
    seed: int | None = None
    out: str = "."
    threads: int = 1
    format: str = "csv"
    check: bool = False
    model: str | None = None
    model_file: str | None = None
    params: dict[str, float] = field(default_factory=dict)
    scale: float | None = None
    K_list: list[float] | None = None
    x0: list[float] | None = None
    guess: list[float] | None = None
    horizon: list[float] | None = None
    dt: float | None = None
    eps: float | None = None
    alpha: float | None = None
    eta: float | None = None
    h: float | None = None
    t: float | None = None
    T: float | None = None
    replicas: int | None = None
    max_horizon: float | None = None
    levels: int | None = None
    emit: list[str] | None = None
    overrides: list[str] = field(default_factory=list, compare=False)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("overrides")
        return d


# (config key, flag, kind, list?)
_OPTIONS = [
    ("seed", "--seed", int, False),
    ("out", "--out", str, False),
    ("threads", "--threads", int, False),
    ("format", "--format", str, False),
    ("model", "--model", str, False),
    ("model_file", "--model-file", str, False),
    ("scale", "--scale", float, False),
    ("K_list", "--K-list", float, True),
    ("x0", "--x0", float, True),
    ("guess", "--guess", float, True),
    ("horizon", "--horizon", float, True),
    ("dt", "--dt", float, False),
    ("eps", "--eps", float, False),
    ("alpha", "--alpha", float, False),
    ("eta", "--eta", float, False),
    ("h", "--h", float, False),
    ("t", "--t", float, False),
    ("T", "--T", float, False),
    ("replicas", "--replicas", int, False),
    ("max_horizon", "--max-horizon", float, False),
    ("levels", "--levels", int, False),
    ("emit", "--emit", str, True),
] + [(name, f"--{name}", float, False) for name in PARAM_NAMES]

_HELP = {
    "analyze": "equilibrium report (analyze.json) and optional fluid path CSV (flow.csv: t, x_1..x_d)",
    "couple": "KMT pair errors (couple_errors.csv: replica, T, error) and tail report (couple_report.json)",
    "simulate": "coupled paths; path CSV: t, X_1..X_d, Z_1..Z_d, gap; gap CSV: t, gap; "
                "summary CSV: replica, sup_gap, crossing_time, events, extensions",
    "experiment": "moddev CSV: replica, tau, censored, in_bracket; qsd CSV: K, survivor, x, rescaled; "
                  "sirs-cost CSV: replica, cost, absorbed; threshold CSV: K, eps, replica, crossing_time",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError([message])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddcoupling", description=__doc__.split("\n\n")[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"ddcoupling {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd, help=_HELP[cmd], description=_HELP[cmd], allow_abbrev=False)
        if cmd == "experiment":
            sp.add_argument("variant", choices=VARIANTS)
        sp.add_argument("--config", help="JSON file of option values; flags override it")
        sp.add_argument("--check", action="store_true", default=None,
                        help="run the built-in acceptance check; exit 3 on failure")
        for key, flag, _, many in _OPTIONS:
            sp.add_argument(flag, dest=key, nargs="+" if many else None, default=None, metavar=key.upper())
    return parser


def _convert(key: str, kind, many: bool, raw, problems: list[str]):
    if raw is None:
        return None
    items = raw if isinstance(raw, list) else [raw]
    if not many and isinstance(raw, list):
        problems.append(f"{key}: expected a single value")
        return None
    out = []
    for item in items:
        try:
            if kind is int:
                if isinstance(item, float) and not item.is_integer():
                    raise ValueError
                val = int(item) if not isinstance(item, str) else int(item, 10)
            elif kind is float:
                val = float(item)
                if not math.isfinite(val):
                    raise ValueError
            else:
                val = str(item)
        except (TypeError, ValueError):
            problems.append(f"{key}: expected {kind.__name__}, got {item!r}")
            return None
        out.append(val)
    return out if many else out[0]


def parse_config(argv: Sequence[str]) -> RunConfig:
    """Parse flags (and an optional ``--config`` file) into a validated :class:`RunConfig`.

    Raises
    ------
    ConfigError
        Listing every problem found: unknown flags, missing fields, bad types.
    """
    parser = build_parser()
    ns, unknown = parser.parse_known_args(list(argv))
    problems = [f"unknown argument {u!r}" for u in unknown]
    if ns.command is None:
        raise ConfigError(problems + ["a subcommand is required: " + ", ".join(COMMANDS)])
    file_vals: dict[str, Any] = {}
    if ns.config:
        try:
            file_vals = json.loads(Path(ns.config).read_text())
            if not isinstance(file_vals, dict):
                raise ValueError("top level must be an object")
        except (OSError, ValueError) as exc:
            problems.append(f"config file {ns.config}: {exc}")
            file_vals = {}
    known = {f.name for f in fields(RunConfig)} - {"overrides"}
    for k in file_vals:
        if k not in known and k not in PARAM_NAMES:
            problems.append(f"unknown config key {k!r}")
    if file_vals.get("command", ns.command) != ns.command:
        problems.append(f"config file is for {file_vals['command']!r}, not {ns.command!r}")
    variant = getattr(ns, "variant", None)
    if variant is not None and file_vals.get("variant") not in (None, variant):
        problems.append(f"config file is for variant {file_vals['variant']!r}")
    cfg = RunConfig(command=ns.command, variant=variant)
    params = dict(file_vals.get("params") or {})
    overrides = []
    for key, _, kind, many in _OPTIONS:
        flag_val = getattr(ns, key)
        if key in PARAM_NAMES:
            file_val = file_vals.get(key, params.get(key))
        else:
            file_val = file_vals.get(key)
        raw = file_val
        if flag_val is not None:
            raw = flag_val
            if file_val is not None:
                overrides.append(key)
        val = _convert(key, kind, many, raw, problems)
        if key in PARAM_NAMES:
            params.pop(key, None)
            if val is not None:
                params[key] = val
        elif val is not None:
            setattr(cfg, key, val)
    for k, v in list(params.items()):
        if k not in PARAM_NAMES:
            problems.append(f"unknown model parameter {k!r}")
        elif not isinstance(v, (int, float)):
            problems.append(f"{k}: expected float, got {v!r}")
    cfg.params = {k: float(v) for k, v in sorted(params.items()) if k in PARAM_NAMES and isinstance(v, (int, float))}
    check = ns.check if ns.check is not None else file_vals.get("check", False)
    if not isinstance(check, bool):
        problems.append("check: expected a boolean")
        check = False
    cfg.check = check
    cfg.overrides = overrides
    problems.extend(validate(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    """All violations of the configuration invariants."""
    p = []
    if cfg.seed is None:
        p.append("seed required (--seed)")
    elif not 0 <= cfg.seed < 2**64:
        p.append("seed must be a 64-bit non-negative integer")
    if cfg.threads < 1:
        p.append("threads must be >= 1")
    if cfg.format not in ("csv", "json"):
        p.append("format must be csv or json")
    if cfg.model is not None and cfg.model_file is not None:
        p.append("give either --model or --model-file, not both")
    for key in ("scale", "dt", "eps", "alpha", "eta", "max_horizon"):
        v = getattr(cfg, key)
        if v is not None and not v > 0:
            p.append(f"{key} must be positive")
    for key in ("h", "t", "T"):
        v = getattr(cfg, key)
        if v is not None and v < 0:
            p.append(f"{key} must be non-negative")
    if cfg.replicas is not None and cfg.replicas < 1:
        p.append("replicas must be >= 1")
    if cfg.levels is not None and not 0 <= cfg.levels <= kmt.MAX_LEVELS:
        p.append(f"levels must be in [0, {kmt.MAX_LEVELS}]")
    if cfg.horizon is not None and any(not v > 0 for v in cfg.horizon):
        p.append("horizon must be positive")
    if cfg.K_list is not None and any(not v > 0 for v in cfg.K_list):
        p.append("K_list entries must be positive")
    if cfg.emit is not None:
        bad = [e for e in cfg.emit if e not in EMITS]
        if bad:
            p.append(f"emit must be among {EMITS}, got {bad}")
    if cfg.command == "experiment" and cfg.variant not in VARIANTS:
        p.append(f"experiment variant must be one of {VARIANTS}")
    if cfg.command != "couple" and cfg.horizon is not None and len(cfg.horizon) != 1:
        p.append("horizon takes a single value for this command")
    if cfg.command in ("analyze", "simulate") and cfg.model is None and cfg.model_file is None:
        p.append("a model is required (--model or --model-file)")
    if cfg.command == "simulate":
        for key in ("scale", "x0", "horizon"):
            if getattr(cfg, key) is None:
                p.append(f"{key} required for simulate")
    if cfg.command == "couple" and cfg.horizon is not None and any(v < 1 for v in cfg.horizon):
        p.append("KMT horizons must be >= 1")
    return p


def config_to_argv(cfg: RunConfig) -> list[str]:
    """Flags reproducing ``cfg`` through :func:`parse_config`."""
    argv = [cfg.command] + ([cfg.variant] if cfg.variant else [])
    defaults = RunConfig(command=cfg.command)
    for key, flag, _, many in _OPTIONS:
        if key in PARAM_NAMES:
            val = cfg.params.get(key)
        else:
            val = getattr(cfg, key)
            if val == getattr(defaults, key):
                continue
        if val is None:
            continue
        argv.append(flag)
        argv.extend([repr(v) if isinstance(v, float) else str(v) for v in val] if many
                    else [repr(val) if isinstance(val, float) else str(val)])
    if cfg.check:
        argv.append("--check")
    return argv


# ---------------------------------------------------------------------------
# output


def atomic_write(path: Path, data: str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


class Emitter:
    """Writes artifacts and their metadata for one run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out)
        self.written: list[str] = []
        self.flags: dict[str, Any] = {}

    def _meta(self, name: str, extra: dict | None = None):
        meta = {
            "artifact": name,
            "config": self.cfg.to_dict(),
            "overridden_by_flags": self.cfg.overrides,
            "seed": self.cfg.seed,
            "version": __version__,
            "backend": BACKEND,
            "flags": self.flags,
        }
        if extra:
            meta.update(extra)
        atomic_write(self.dir / f"{name}.meta.json", _dumps(meta))

    def json(self, name: str, obj) -> None:
        atomic_write(self.dir / name, _dumps(obj))
        self._meta(name)
        self.written.append(name)

    def table(self, stem: str, header: list[str], rows: list[list[Any]]) -> None:
        if self.cfg.format == "json":
            name = f"{stem}.json"
            atomic_write(self.dir / name, _dumps({"columns": header, "rows": rows}))
        else:
            name = f"{stem}.csv"
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
            atomic_write(self.dir / name, buf.getvalue())
        self._meta(name)
        self.written.append(name)


# ---------------------------------------------------------------------------
# commands


def resolve_model(cfg: RunConfig, default: str | None = None) -> Model:
    if cfg.model_file is not None:
        return load_model(cfg.model_file)
    name = cfg.model or default
    if name is None:
        raise ConfigError(["a model is required"])
    return make_catalog_model(name, cfg.params)


def default_guess(model: Model) -> np.ndarray:
    lo = np.asarray(model.domain.lo, dtype=float)
    hi = np.minimum(np.asarray(model.domain.hi, dtype=float), lo + 1.0)
    c = 1.0 / (model.d + 1) if model.domain.simplex else 0.5
    return lo + c * (hi - lo)


def _equilibrium(cfg: RunConfig, model: Model) -> analysis.EquilibriumReport:
    guess = np.array(cfg.guess) if cfg.guess is not None else default_guess(model)
    return analysis.find_equilibrium(model, guess)


def _one(v: list[float] | None, default=None):
    return default if v is None else v[0]


def cmd_analyze(cfg: RunConfig, em: Emitter) -> bool:
    model = resolve_model(cfg)
    eq = _equilibrium(cfg, model)
    report = eq.to_dict()
    report["model"] = repr(model)
    report["relaxation_time"] = {str(k): eq.relaxation_time(k) for k in (cfg.K_list or [])}
    if eq.Sigma_star is not None:
        report["lyapunov_residual"] = analysis.lyapunov_residual(eq.jac, eq.Sigma_star, eq.S_star)
    em.json("analyze.json", report)
    if cfg.horizon is not None:
        x0 = np.array(cfg.x0) if cfg.x0 is not None else eq.x_star
        dt = cfg.dt or analysis.default_dt(eq.rho_star if eq.stable else None)
        traj = analysis.flow(model, x0, cfg.horizon[0], dt)
        em.flags["flow_exited"] = traj.exited
        header = ["t"] + [f"x_{i + 1}" for i in range(model.d)]
        em.table("flow", header, [[t, *x] for t, x in zip(traj.times, traj.states)])
    ok = eq.stable and report.get("lyapunov_residual", 1.0) <= 1e-10
    return ok


DEFAULT_TAIL_CELLS = [
    {"kind": "poisson", "S": 10, "A": 6},
    {"kind": "poisson", "S": 10, "A": 8},
    {"kind": "poisson", "S": 50, "A": 20},
    {"kind": "poisson", "S": 50, "A": 30},
    {"kind": "poisson", "S": 100, "A": 30},
    {"kind": "poisson", "S": 100, "A": 40},
    {"kind": "brownian_integral", "S": 1, "A": 2, "rho": 1},
    {"kind": "brownian_integral", "S": 1, "A": 3, "rho": 1},
    {"kind": "brownian_integral", "S": 1, "A": 5, "rho": 2},
    {"kind": "brownian_integral", "S": 4, "A": 3, "rho": 0.5},
]


def cmd_couple(cfg: RunConfig, em: Emitter) -> bool:
    horizons = cfg.horizon or [256.0]
    replicas = cfg.replicas or 1000
    rows, errs = [], {}
    for T in horizons:
        e = kmt.error_samples(T, replicas, derive(cfg.seed, "couple"), cfg.levels)
        errs[T] = e
        rows.extend([[r, T, float(v)] for r, v in enumerate(e)])
    em.table("couple_errors", ["replica", "T", "error"], rows)
    cells = DEFAULT_TAIL_CELLS if cfg.check else []
    report = kmt.validate_tail_bounds(cells, max(replicas, 1000), derive(cfg.seed, "couple-tail")) if cells \
        else kmt.TailReport(cells=[])
    if len(horizons) >= 3:
        meds = np.array([np.median(errs[T]) for T in horizons])
        c0, c1, r2 = kmt._linear_fit(np.log(horizons), meds)
        report.growth = {"horizons": horizons, "medians": meds.tolist(), "c0": c0, "c1": c1, "r2": r2,
                         "pass": bool(c1 > 0 and r2 > 0.9)}
    Tmax = max(horizons)
    if replicas >= 100:
        report.tail = kmt.error_tail(Tmax, errors=errs[Tmax])
    em.json("couple_report.json", report.to_dict())
    return report.passed


def cmd_simulate(cfg: RunConfig, em: Emitter) -> bool:
    model = resolve_model(cfg)
    eq = _equilibrium(cfg, model)
    K = cfg.scale
    horizon = cfg.horizon[0]
    dt = cfg.dt or 0.005
    replicas = cfg.replicas or 1
    emit = cfg.emit or ["summary"]
    sim = simulate.CoupledSimulator(model, eq, K, cfg.x0, horizon, dt)
    eps = cfg.eps

    def one(i):
        return sim.sample(derive(cfg.seed, "simulate", i))

    paths = map_replicas(one, replicas, cfg.threads)
    d = model.d
    summary_rows, per = [], []
    for i, c in enumerate(paths):
        cross = simulate.gap_crossing_time(c, eps) if eps is not None else None
        summary_rows.append([i, c.sup_gap, "" if cross is None else cross, c.flags["events"], c.flags["extensions"]])
        per.append({"replica": i, "sup_gap": c.sup_gap, "crossing_time": cross, "flags": c.flags})
        if "path" in emit:
            Xg = c.X_grid
            gap = np.linalg.norm(Xg - c.Z, axis=1)
            header = ["t"] + [f"X_{k + 1}" for k in range(d)] + [f"Z_{k + 1}" for k in range(d)] + ["gap"]
            em.table(f"path_{i}", header, [[t, *x, *z, g] for t, x, z, g in zip(c.times, Xg, c.Z, gap)])
        if "gap" in emit:
            em.table(f"gap_{i}", ["t", "gap"], [[t, g] for t, g in zip(c.gap_times, c.gap_values)])
    sups = np.array([p["sup_gap"] for p in per])
    summary = {"K": K, "x0": cfg.x0, "horizon": horizon, "dt": dt, "eps": eps, "replicas": replicas,
               "median_sup_gap": float(np.median(sups)), "replicas_detail": per}
    ok = True
    if eps is not None:
        summary["fraction_below_eps"] = float(np.mean(sups < eps))
        ok = summary["fraction_below_eps"] >= 0.95
    em.flags["extensions"] = int(sum(p["flags"]["extensions"] for p in per))
    em.flags["left_compact"] = int(sum(bool(p["flags"]["left_compact"]) for p in per))
    if "summary" in emit:
        em.table("summary", ["replica", "sup_gap", "crossing_time", "events", "extensions"], summary_rows)
    em.json("simulate_summary.json", summary)
    return ok


def cmd_moddev(cfg: RunConfig, em: Emitter) -> bool:
    model = resolve_model(cfg, "logistic")
    eq = _equilibrium(cfg, model)
    K = cfg.scale or 400.0
    eta = cfg.eta or math.sqrt(6.0 / K)
    h = 0.25 if cfg.h is None else cfg.h
    s = experiments.moderate_deviation_times(model, eq, K, eta, h, cfg.replicas or 200, cfg.max_horizon,
                                             derive(cfg.seed, "experiment"), cfg.threads)
    header, rows = s.rows()
    em.table("moddev", header, rows)
    summary = s.to_dict()
    summary["threshold_fraction"] = 0.8
    summary["pass"] = s.fraction >= 0.8
    em.json("moddev_summary.json", summary)
    return summary["pass"]


def cmd_qsd(cfg: RunConfig, em: Emitter) -> bool:
    p = cfg.params.get("p", 2.0)
    q = cfg.params.get("q", 1.0)
    Ks = cfg.K_list or ([cfg.scale] if cfg.scale else [50.0, 100.0, 200.0])
    t = cfg.t if cfg.t is not None else 30.0 / (p - q)
    T = cfg.T or 0.0
    rows, table = [], []
    x0 = _one(cfg.x0)
    for idx, K in enumerate(Ks):
        ens = experiments.conditioned_ensemble(p, q, K, t, T, cfg.replicas or 10000, derive(cfg.seed, "qsd", idx),
                                               x0=x0, threads=cfg.threads)
        w = experiments.wasserstein_truncated_1d(ens.rescaled, p)
        entry = ens.to_dict()
        entry["wasserstein_truncated"] = w
        table.append(entry)
        rows.extend([[K, i, x, z] for i, (x, z) in enumerate(zip(ens.marginals, ens.rescaled))])
    em.table("qsd", ["K", "survivor", "x", "rescaled"], rows)
    ws = [e["wasserstein_truncated"] for e in table]
    ok = all(b <= a for a, b in zip(ws, ws[1:])) and ws[-1] < 0.15
    em.json("qsd_summary.json", {"p": p, "q": q, "t": t, "T": T, "ensembles": table, "pass": ok})
    return ok


def cmd_sirs_cost(cfg: RunConfig, em: Emitter) -> bool:
    lam = cfg.params.get("lam", 2.0)
    gam = cfg.params.get("gam", 1.0)
    theta = cfg.params.get("theta", 1.0)
    K = cfg.scale or 200.0
    T = cfg.T or 50.0
    c = experiments.sirs_cost_samples(lam, gam, theta, K, T, cfg.replicas or 500, derive(cfg.seed, "experiment"),
                                      cfg.threads)
    header, rows = c.rows()
    em.table("sirs_cost", header, rows)
    summary = c.to_dict()
    summary["sigma_oracle"] = experiments.sigma_oracle(lam, gam, theta).to_dict()
    mean_ok = abs(c.mean - c.predicted_mean) <= 3 * c.std_error
    var_ok = abs(c.var - c.predicted_var) <= 0.3 * c.predicted_var
    summary.update({"mean_within_3se": bool(mean_ok), "var_within_30pct": bool(var_ok),
                    "pass": bool(mean_ok and var_ok)})
    em.json("sirs_cost_summary.json", summary)
    return summary["pass"]


def cmd_threshold(cfg: RunConfig, em: Emitter) -> bool:
    model = resolve_model(cfg, "logistic")
    eq = _equilibrium(cfg, model)
    table = experiments.threshold_time_ensemble(
        model, eq, cfg.K_list or [50.0, 100.0, 200.0], cfg.alpha or 1.0, cfg.replicas or 100,
        cfg.max_horizon or 50.0, derive(cfg.seed, "experiment"), x0=cfg.x0, dt_grid=cfg.dt or 0.01,
        threads=cfg.threads,
    )
    header, rows = table.csv_rows()
    em.table("threshold", header, rows)
    em.json("threshold_summary.json", table.to_dict())
    return table.nonincreasing


DISPATCH = {
    ("analyze", None): cmd_analyze,
    ("couple", None): cmd_couple,
    ("simulate", None): cmd_simulate,
    ("experiment", "moddev"): cmd_moddev,
    ("experiment", "qsd"): cmd_qsd,
    ("experiment", "sirs-cost"): cmd_sirs_cost,
    ("experiment", "threshold"): cmd_threshold,
}


def _error(kind: str, exc: BaseException, code: int, problems=None) -> int:
    doc = {"error": kind, "message": str(exc), "exit_code": code}
    if problems:
        doc["problems"] = problems
    sys.stderr.write(json.dumps(doc) + "\n")
    return code


def run(cfg: RunConfig) -> int:
    """Execute a validated configuration; returns the exit code."""
    em = Emitter(cfg)
    try:
        ok = DISPATCH[(cfg.command, cfg.variant)](cfg, em)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG, exc.problems)
    except (ModelError, DomainError, ValueError) as exc:
        return _error(type(exc).__name__, exc, EXIT_CONFIG)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        return _error(type(exc).__name__, exc, EXIT_RUNTIME)
    if cfg.check and not ok:
        sys.stderr.write(json.dumps({"error": "check", "message": "acceptance check failed",
                                     "exit_code": EXIT_CHECK}) + "\n")
        return EXIT_CHECK
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if any(a in ("-h", "--help", "--version") for a in argv):
        try:
            build_parser().parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG, exc.problems)
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
