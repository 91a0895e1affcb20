"""Command-line entry point: ``cuear <command> [flags]``.

Exit status: 0 on success, 1 on usage errors, 2 on statistical degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import simulation as sim
from .cue import OptimOptions, minimize_over_gamma
from .errors import CueArError, DegeneracyError, UsageError
from .hac import KernelSpec
from .inference import SearchOptions, ar_test, invert_ar_ci, klm_test, project_ci, wald_t_test
from .moments import (InstrumentSet, ParamPoint, make_linear_iv_model,
                      make_local_projection_model, make_nkpc_model, read_csv)
from .theory_diag import EPS_SCALE, bound_decomposition

COMMANDS = ("test", "ci", "project-ci", "diagnose", "mc-size", "mc-power")
MODELS = ("linear-iv", "nkpc", "local-projection")
DATA_COMMANDS = ("test", "ci", "project-ci", "diagnose")
VERSION = "0.1.0"


@dataclass
class RunConfig:
    command: str
    model: str | None = None
    data: str | None = None
    y: list = field(default_factory=list)
    x: list = field(default_factory=list)
    w: list = field(default_factory=list)
    z: list = field(default_factory=list)
    null: list | None = None
    truth_gamma: list | None = None
    alpha: float = 0.05
    kernel: str = "trunc0"
    bandwidth: float | None = None
    grid: tuple | None = None
    component: int = 0
    horizon: int = 0
    instruments: str = "xlags"
    eps: float | None = None
    reps: int = 2000
    seed: int = 1
    threads: int = 1
    cells: str | None = None
    T: int = 100
    rho2: float = -0.65
    rho_eta_nu: float = 0.99
    gamma_f_null: float = 0.5
    out: str = "out.csv"
    overridden: list = field(default_factory=list)

    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.bandwidth)


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _names(text):
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _grid(text):
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError("grid must be lo:hi:steps")
    lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi and steps >= 2):
        raise ValueError("grid needs finite lo < hi and steps >= 2")
    return lo, hi, steps


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cuear", description="Subset AR / KLM inference with CUE-HAC weighting.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        # every default is None so config-file values can be told apart from explicit flags
        p.add_argument("--config", default=None, help="JSON file of flag values; flags win")
        p.add_argument("--out", default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--kernel", choices=["trunc0", "bartlett", "parzen", "qs"], default=None)
        p.add_argument("--bandwidth", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        if name in DATA_COMMANDS:
            p.add_argument("--model", choices=MODELS, default=None)
            p.add_argument("--data", default=None)
            for role in ("y", "x", "w", "z"):
                p.add_argument(f"--{role}", default=None, help="comma-separated column names")
            p.add_argument("--horizon", type=int, default=None)
            p.add_argument("--instruments", choices=[i.value for i in InstrumentSet], default=None)
        if name in ("test", "ci", "diagnose"):
            p.add_argument("--null", default=None, help="comma-separated beta0")
        if name in ("ci", "project-ci", "mc-power"):
            p.add_argument("--grid", default=None, help="lo:hi:steps")
        if name == "project-ci":
            p.add_argument("--component", type=int, default=None)
        if name == "diagnose":
            p.add_argument("--truth-gamma", dest="truth_gamma", default=None)
            p.add_argument("--eps", type=float, default=None)
        if name in ("mc-size", "mc-power"):
            p.add_argument("--reps", type=int, default=None)
            p.add_argument("--threads", type=int, default=None)
            p.add_argument("--instruments", choices=[i.value for i in InstrumentSet], default=None)
            p.add_argument("--T", dest="T", type=int, default=None)
        if name == "mc-size":
            p.add_argument("--cells", default=None, help="JSON list of cell settings")
        if name == "mc-power":
            p.add_argument("--rho2", type=float, default=None)
            p.add_argument("--rho-eta-nu", dest="rho_eta_nu", type=float, default=None)
            p.add_argument("--gamma-f-null", dest="gamma_f_null", type=float, default=None)
    return parser


_CONVERT = {"y": _names, "x": _names, "w": _names, "z": _names, "null": _floats,
            "truth_gamma": _floats, "grid": _grid}


def parse_config(argv=None) -> RunConfig:
    """Parse flags (and an optional JSON config file) into a validated RunConfig."""
    ns = vars(build_parser().parse_args(argv))
    file_values = {}
    if ns.get("config"):
        try:
            with open(ns["config"], encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
    known = {f.name for f in fields(RunConfig)} - {"command", "overridden"}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    values, overridden = {}, []
    for key in known:
        cli = ns.get(key)
        if cli is not None:
            values[key] = cli
            if key in file_values:
                overridden.append(key)
        elif key in file_values:
            values[key] = file_values[key]
    problems = []
    for key, conv in _CONVERT.items():
        if key in values and values[key] is not None:
            try:
                values[key] = conv(values[key])
            except (TypeError, ValueError) as exc:
                problems.append(f"--{key.replace('_', '-')}: {exc}")
    if problems:
        raise UsageError("; ".join(problems))
    cfg = RunConfig(command=ns["command"], overridden=sorted(overridden), **values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    problems = []
    if not 0.0 < cfg.alpha < 1.0:
        problems.append("--alpha must lie in (0, 1)")
    if cfg.bandwidth is not None and not cfg.bandwidth > 0:
        problems.append("--bandwidth must be positive")
    if cfg.command in DATA_COMMANDS:
        if cfg.model is None:
            problems.append("--model is required")
        if cfg.data is None:
            problems.append("--data is required")
        needed = {"linear-iv": "yxwz", "nkpc": "yx", "local-projection": "yxwz"}.get(cfg.model, "")
        for role in needed:
            if not getattr(cfg, role):
                problems.append(f"--{role} is required for model {cfg.model}")
        if cfg.model == "local-projection" and cfg.horizon < 0:
            problems.append("--horizon must be >= 0")
    if cfg.command in ("test", "diagnose") and cfg.null is None:
        problems.append("--null is required")
    if cfg.command == "ci" and cfg.grid is None:
        problems.append("--grid is required")
    if cfg.command == "diagnose" and cfg.truth_gamma is None:
        problems.append("--truth-gamma is required")
    if cfg.command == "diagnose" and cfg.eps is not None and not cfg.eps > 0:
        problems.append("--eps must be positive")
    if cfg.command in ("mc-size", "mc-power"):
        if cfg.reps < 0:
            problems.append("--reps must be >= 0")
        if cfg.threads < 1:
            problems.append("--threads must be >= 1")
    if problems:
        raise UsageError("; ".join(problems))


# --- output ----------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.6g}"
    if v is None:
        return ""
    return str(v)


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_metadata(cfg: RunConfig, records: list[dict]) -> Path:
    """JSON-lines file next to the CSV: run settings first, then result records."""
    path = Path(str(cfg.out) + ".meta.jsonl")
    settings = {k: v for k, v in vars(cfg).items()}
    head = {
        "record": "run",
        "config": settings,
        "versions": {"cuear": VERSION, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "decisions": {
            "kernel": cfg.kernel,
            "bandwidth": cfg.bandwidth if cfg.bandwidth is not None else "floor(4 (n/100)^(2/9))",
            "eps_rule": f"{EPS_SCALE} * max(largest eigenvalue of Gamma_hat, 1)" if cfg.eps is None else cfg.eps,
            "instrument_variant": cfg.instruments,
            "t_test": "two-step efficient GMM, HAC sandwich at the second-step estimate",
            "sv_innovation": "N(0, 0.2) read as variance 0.2",
            "cell_seed_rule": "SeedSequence(seed, spawn_key=(cell index,)) first 64-bit word",
        },
        "overridden_by_cli": cfg.overridden,
    }
    with open(path, "w", encoding="utf-8") as fh:
        for rec in [head, *records]:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
    return path


# --- commands --------------------------------------------------------------------------


def load_model(cfg: RunConfig):
    roles = {r: getattr(cfg, r) for r in ("y", "x", "w", "z") if getattr(cfg, r)}
    data = read_csv(cfg.data, roles)
    if cfg.model == "linear-iv":
        return make_linear_iv_model(data)
    if cfg.model == "nkpc":
        return make_nkpc_model(data, InstrumentSet(cfg.instruments))
    return make_local_projection_model(data, cfg.horizon)


def _check_null(model, beta0):
    if len(beta0) != model.d_beta:
        raise UsageError(f"--null needs {model.d_beta} value(s), got {len(beta0)}")


TEST_COLUMNS = ["test", "beta0", "stat", "df", "crit", "pvalue", "reject", "converged"]


def cmd_test(cfg: RunConfig):
    model = load_model(cfg)
    beta0 = cfg.null
    _check_null(model, beta0)
    kernel = cfg.kernel_spec
    ar = minimize_over_gamma(model, beta0, kernel)
    results = [ar_test(model, beta0, kernel, cfg.alpha, ar=ar),
               klm_test(model, beta0, kernel, cfg.alpha, ar=ar)]
    if model.d_beta == 1:
        results.append(wald_t_test(model, 0, beta0[0], kernel, cfg.alpha))
    label = ";".join(_fmt(b) for b in beta0)
    rows = [{"test": r.name, "beta0": label, "stat": r.stat, "df": r.df, "crit": r.crit,
             "pvalue": r.pvalue, "reject": r.reject, "converged": r.converged} for r in results]
    write_csv(cfg.out, rows, TEST_COLUMNS)
    return [{"record": "test", "name": r.name, "stat": r.stat, "nuisance": r.nuisance_at_null,
             "meta": r.meta} for r in results]


def cmd_ci(cfg: RunConfig):
    model = load_model(cfg)
    lo, hi, steps = cfg.grid
    cs = invert_ar_ci(model, cfg.kernel_spec, cfg.alpha, np.linspace(lo, hi, steps))
    rows = [{"beta": b, "stat": s, "accepted": a, "converged": c, "failed": f}
            for b, s, a, c, f in zip(cs.grid, cs.stats, cs.accepted, cs.converged, cs.failed)]
    write_csv(cfg.out, rows, ["beta", "stat", "accepted", "converged", "failed"])
    return [{"record": "ci", "interval": cs.interval, "convex": cs.convex, "df": cs.df,
             "crit": cs.crit, "open_lower": cs.open_lower, "open_upper": cs.open_upper}]


def cmd_project_ci(cfg: RunConfig):
    model = load_model(cfg)
    if not 0 <= cfg.component < model.d_beta:
        raise UsageError(f"--component must lie in [0, {model.d_beta})")
    search = SearchOptions(*cfg.grid) if cfg.grid else SearchOptions()
    interval, cs = project_ci(model, cfg.kernel_spec, cfg.alpha, cfg.component, search)
    lower, upper = interval if interval else (math.nan, math.nan)
    rows = [{"component": cfg.component, "lower": lower, "upper": upper, "df": cs.df,
             "empty": interval is None, "convex": cs.convex}]
    write_csv(cfg.out, rows, ["component", "lower", "upper", "df", "empty", "convex"])
    return [{"record": "project-ci", "interval": interval, "crit": cs.crit,
             "open_lower": cs.open_lower, "open_upper": cs.open_upper}]


DIAG_COLUMNS = ["ar_stat", "q_at_tilde", "m_term", "varpi", "foc_residual_norm", "proj_rank",
                "proj_gap", "eps_used"]


def cmd_diagnose(cfg: RunConfig):
    model = load_model(cfg)
    _check_null(model, cfg.null)
    if len(cfg.truth_gamma) != model.d_gamma:
        raise UsageError(f"--truth-gamma needs {model.d_gamma} value(s)")
    rep = bound_decomposition(model, ParamPoint(cfg.null, cfg.truth_gamma), cfg.kernel_spec, cfg.eps)
    write_csv(cfg.out, [vars(rep)], DIAG_COLUMNS)
    return [{"record": "diagnose", "gamma_tilde": rep.gamma_tilde, **{c: getattr(rep, c) for c in DIAG_COLUMNS}}]


SIZE_COLUMNS = ["T", "rho2", "rho_eta_nu", "instrument_set", "test", "rejection", "mc_se", "failures"]


def size_cells(cfg: RunConfig) -> list:
    base = {"T": cfg.T, "instrument_set": cfg.instruments}
    if cfg.cells:
        try:
            with open(cfg.cells, encoding="utf-8") as fh:
                specs = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read cells file: {exc}") from None
        if not isinstance(specs, list):
            raise UsageError("cells file must hold a JSON list")
    else:
        specs = [{"rho2": r2, "rho_eta_nu": r} for r2 in sim.RHO2_GRID for r in sim.RHO_ETA_NU_GRID]
    cells = []
    for i, spec in enumerate(specs):
        spec = {**base, **spec}
        spec.setdefault("seed", sim.derive_seed(cfg.seed, i))
        try:
            cells.append(sim.NkpcConfig(**spec))
        except TypeError as exc:
            raise UsageError(f"cell {i}: {exc}") from None
    return cells


def cmd_mc_size(cfg: RunConfig):
    cells = size_cells(cfg)
    results = sim.run_size_experiment(cells, cfg.reps, cfg.alpha, cfg.threads)
    write_csv(cfg.out, sim.size_rows(results), SIZE_COLUMNS)
    return [{"record": "cell", "config": c.config.as_dict(), "rejection": c.rejection,
             "mc_se": c.mc_se, "failures": c.failures} for c in results]


def cmd_mc_power(cfg: RunConfig):
    base = sim.NkpcConfig(T=cfg.T, rho2=cfg.rho2, rho_eta_nu=cfg.rho_eta_nu,
                          gamma_f_null=cfg.gamma_f_null, instrument_set=cfg.instruments,
                          seed=sim.derive_seed(cfg.seed, 0))
    grid = np.linspace(*cfg.grid[:2], cfg.grid[2]) if cfg.grid else sim.default_power_grid()
    rows = sim.run_power_experiment(base, grid, cfg.reps, cfg.alpha, cfg.threads)
    write_csv(cfg.out, rows, ["gamma_f_true", "test", "rejection", "mc_se", "failures"])
    return [{"record": "power", "base": base.as_dict(), "grid": grid}]


HANDLERS = {"test": cmd_test, "ci": cmd_ci, "project-ci": cmd_project_ci,
            "diagnose": cmd_diagnose, "mc-size": cmd_mc_size, "mc-power": cmd_mc_power}


def run(cfg: RunConfig) -> int:
    records = HANDLERS[cfg.command](cfg)
    write_metadata(cfg, records)
    return 0


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
        return run(cfg)
    except UsageError as exc:
        print(f"cuear: usage error: {exc}", file=sys.stderr)
        return 1
    except DegeneracyError as exc:
        print(f"cuear: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cuear: usage error: {exc}", file=sys.stderr)
        return 1
    except CueArError as exc:  # pragma: no cover - every error is one of the above
        print(f"cuear: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
