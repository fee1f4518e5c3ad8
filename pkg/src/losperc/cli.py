"""Command-line experiment runner.

Every result file is JSON lines: a manifest record (command, effective
configuration, output path, creation time, tool version) followed by one
record per result.  Re-running with ``--config <results file>`` replays the
manifest; flags given on the command line override it.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import secrets
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .coarsegrain import GoodnessMode, sample_site_grid
from .geometry import RngStream, Window
from .montecarlo import (AXES, BracketError, DimensionlessParams, ExperimentConfig, ModelParams,
                         NonMonotoneError, Realization, crossing_probability, find_critical, sweep,
                         wilson_interval)
from .pvt import build_tessellation, compute_stats, sample_seeds

COMMANDS = ("estimate", "sweep", "critical", "diagnose", "stats", "export")

CSV_COLUMNS = ("p", "U", "H", "lambda_S", "lambda", "r", "p_hat", "ci_low", "ci_high",
               "trials", "successes", "window_cells", "band", "master_seed")

DEFAULTS = {
    "p": 1.0, "U": 0.0, "H": 0.0, "lambdaS": 1.0,
    "cells": 2000.0, "trials": 200, "band": None, "threads": 1, "guard": 3.0,
    "axis": "p", "grid": None, "coupled": False, "bracket": None, "target": 0.5, "tol": 0.01,
    "mode": "subcritical", "n": 1.0, "reps": 20, "sites": 1, "margin": 5.0,
}

FLOAT_KEYS = {"p", "U", "H", "lambda", "r", "lambdaS", "cells", "band", "guard", "target",
              "tol", "n", "margin"}
INT_KEYS = {"trials", "threads", "seed", "reps", "sites"}
BOOL_KEYS = {"coupled"}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _float_or_inf(s: str) -> float:
    return math.inf if str(s).strip().lower() in ("inf", "infinity") else float(s)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="losperc", description="Line-of-sight percolation on Poisson-Voronoi streets")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        # every default is None so that config-file values can be told apart from flags
        g = p.add_argument_group("model")
        g.add_argument("--p", type=float)
        g.add_argument("--U", type=float)
        g.add_argument("--H", type=float)
        g.add_argument("--lambda", dest="lambda", type=float)
        g.add_argument("--r", type=_float_or_inf)
        g.add_argument("--lambdaS", type=float)
        e = p.add_argument_group("experiment")
        e.add_argument("--cells", type=float, help="mean number of Voronoi cells in the window")
        e.add_argument("--trials", type=int)
        e.add_argument("--seed", type=int)
        e.add_argument("--band", type=float)
        e.add_argument("--guard", type=float)
        e.add_argument("--threads", type=int)
        e.add_argument("--config", type=Path)
        e.add_argument("--out", type=Path)
        e.add_argument("--figure", type=Path)

    p = sub.add_parser("estimate", help="crossing probability at one parameter point")
    common(p)
    p = sub.add_parser("sweep", help="crossing probability along one axis")
    common(p)
    p.add_argument("--axis", choices=AXES)
    p.add_argument("--grid", help="comma-separated sorted values")
    p.add_argument("--coupled", action="store_true", default=None)
    p = sub.add_parser("critical", help="bisection for a critical value")
    common(p)
    p.add_argument("--axis", choices=AXES)
    p.add_argument("--bracket", help="low,high")
    p.add_argument("--target", type=float)
    p.add_argument("--tol", type=float)
    p = sub.add_parser("diagnose", help="n-good / n-bad site frequencies")
    common(p)
    p.add_argument("--mode", choices=[m.value for m in GoodnessMode])
    p.add_argument("--n", type=float)
    p.add_argument("--reps", type=int)
    p.add_argument("--sites", type=int, help="sites per side of the classified block")
    p = sub.add_parser("stats", help="street intensity and mean street length estimates")
    common(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--margin", type=float)
    p = sub.add_parser("export", help="flatten estimate records to CSV")
    p.add_argument("results", type=Path)
    p.add_argument("csv_out", type=Path)
    p.add_argument("--figure", type=Path)
    p.add_argument("--axis", choices=AXES)
    return parser


def _coerce(key: str, value):
    if value is None or value == "" or str(value).lower() == "none":
        return None
    if key in BOOL_KEYS:
        return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
    if key in INT_KEYS:
        return int(value)
    if key == "r":
        return _float_or_inf(value) if not isinstance(value, float) else value
    if key in FLOAT_KEYS:
        return float(value)
    return value


def read_config_file(path: Path) -> tuple[Optional[str], dict]:
    """Flat ``key = value`` file, or a results file whose manifest is replayed."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    if first.startswith("{"):
        rec = json.loads(first)
        if rec.get("kind") != "manifest":
            raise ConfigError(f"{path}: first record is not a manifest")
        return rec["command"], dict(rec["config"])
    cfg = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        cfg[k.lstrip("-")] = v
    return None, cfg


def effective_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults < config file < flags; the result is what the manifest records."""
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config", "out", "figure") and v is not None}
    file_cfg = {}
    if args.config is not None:
        file_cmd, file_cfg = read_config_file(args.config)
        if file_cmd is not None and file_cmd != command:
            raise ConfigError(f"manifest is for {file_cmd!r}, not {command!r}")
    model_keys = ({"U", "H"}, {"lambda", "r"})
    # a coordinate system chosen by flags replaces the one from the file
    for mine, other in (model_keys, model_keys[::-1]):
        if mine & flags.keys() and not (other & flags.keys()):
            for k in other:
                file_cfg.pop(k, None)
    merged = {k: _coerce(k, v) for k, v in file_cfg.items()}
    merged.update(flags)
    if (model_keys[0] & merged.keys()) and (model_keys[1] & merged.keys()):
        raise ConfigError("give either --U/--H or --lambda/--r, not both")
    for k, v in DEFAULTS.items():
        merged.setdefault(k, v)
    if "lambda" in merged or "r" in merged:
        merged.pop("U", None)
        merged.pop("H", None)
        merged.setdefault("lambda", 0.0)
        merged.setdefault("r", math.inf)
    if merged.get("seed") is None:
        merged["seed"] = secrets.randbits(63)
    return {k: merged[k] for k in sorted(merged)}


def params_from(cfg: dict):
    if "lambda" in cfg:
        return ModelParams(cfg["lambdaS"], cfg["p"], cfg["lambda"], cfg["r"])
    return DimensionlessParams(cfg["p"], cfg["U"], cfg["H"])


def experiment_from(cfg: dict) -> ExperimentConfig:
    return ExperimentConfig(params_from(cfg), window_cells=cfg["cells"], band=cfg["band"],
                            trials=cfg["trials"], master_seed=cfg["seed"],
                            lambda_S=cfg["lambdaS"], guard=cfg["guard"])


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def _jsonable(cfg: dict) -> dict:
    return {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in cfg.items()}


class _Sink:
    def __init__(self, path: Optional[Path]):
        self.path = path
        self.fh = sys.stdout if path is None or str(path) == "-" else open(path, "w", encoding="utf-8")

    def write(self, rec: dict):
        self.fh.write(json.dumps(rec, default=_json_default, allow_nan=False) + "\n")
        self.fh.flush()

    def close(self):
        if self.fh is not sys.stdout:
            self.fh.close()


def _manifest(command: str, cfg: dict, out: Optional[Path]) -> dict:
    return {"kind": "manifest", "command": command, "config": _jsonable(cfg),
            "output_path": None if out is None else str(out),
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "tool_version": __version__}


def _with_axis_value(rec: dict, axis: str, value: float) -> dict:
    return {**rec, "axis": axis, "axis_value": value}


def cmd_estimate(cfg, sink, figure):
    exp = experiment_from(cfg)
    res = crossing_probability(exp, threads=cfg["threads"])
    sink.write(res.record())
    if figure is not None:
        from .report import plot_realization
        m = exp.model
        real = Realization(RngStream(exp.master_seed, 0), exp.window, m.lambda_S, m.lam, exp.guard)
        if real.tessellation is not None:
            nodes, labels = real.graph(m.p, m.lam, m.r)
            plot_realization(real.tessellation, nodes, labels, figure)
    return (f"p_hat={res.p_hat:.4f} [{res.ci_low:.4f}, {res.ci_high:.4f}] "
            f"({res.successes}/{res.trials}, {res.wall_time:.1f}s)")


def _grid(cfg) -> list[float]:
    if not cfg.get("grid"):
        raise ConfigError("sweep needs --grid")
    vals = [float(v) for v in str(cfg["grid"]).split(",") if v.strip()]
    if vals != sorted(vals):
        raise ConfigError("--grid must be sorted")
    return vals


def cmd_sweep(cfg, sink, figure):
    exp = experiment_from(cfg)
    grid = _grid(cfg)
    results = sweep(cfg["axis"], grid, exp.params, exp, coupled=bool(cfg["coupled"]),
                    threads=cfg["threads"])
    rows = []
    for v, res in zip(grid, results):
        rec = _with_axis_value(res.record(), cfg["axis"], v)
        rows.append(rec)
        sink.write(rec)
    if figure is not None:
        from .report import plot_crossing_curve
        plot_crossing_curve(rows, "axis_value", figure)
    return " ".join(f"{v:g}:{r.p_hat:.3f}" for v, r in zip(grid, results))


def cmd_critical(cfg, sink, figure):
    exp = experiment_from(cfg)
    if not cfg.get("bracket"):
        raise ConfigError("critical needs --bracket low,high")
    try:
        lo, hi = (float(v) for v in str(cfg["bracket"]).split(","))
    except ValueError:
        raise ConfigError("--bracket must be low,high") from None
    crit = find_critical(cfg["axis"], exp.params, (lo, hi), exp, target=cfg["target"],
                         tol=cfg["tol"], threads=cfg["threads"])
    rows = []
    for v, res in crit.evaluations:
        rec = _with_axis_value(res.record(), cfg["axis"], v)
        rows.append(rec)
        sink.write(rec)
    sink.write(crit.record())
    if figure is not None:
        from .report import plot_crossing_curve
        plot_crossing_curve(rows, "axis_value", figure, target=crit.target, critical=crit.value)
    return f"{crit.axis}_c={crit.value:.4f} bracket=({crit.bracket[0]:.4f}, {crit.bracket[1]:.4f})"


def cmd_diagnose(cfg, sink, figure):
    exp = experiment_from(cfg)
    m = exp.model
    mode = GoodnessMode(cfg["mode"])
    bad = total = 0
    last = None
    for rep in range(cfg["reps"]):
        grid = sample_site_grid(m, cfg["n"], cfg["sites"], RngStream(exp.master_seed, rep), mode)
        for rec in grid.records():
            sink.write({**rec, "rep": rep})
        bad += int(grid.bad.sum())
        total += int(grid.evaluated.sum())
        last = grid
    lo, hi = wilson_interval(bad, total) if total else (0.0, 1.0)
    sink.write({"kind": "diagnose", "mode": mode.value, "n": cfg["n"], "reps": cfg["reps"],
                "sites_evaluated": total, "bad_frequency": bad / total if total else None,
                "ci_low": lo, "ci_high": hi, "master_seed": exp.master_seed})
    if figure is not None and last is not None:
        from .report import plot_site_grid
        plot_site_grid(last, figure)
    return f"{mode.value} n={cfg['n']:g}: bad frequency {bad}/{total}"


def cmd_stats(cfg, sink, figure):
    lam_s = cfg["lambdaS"]
    side = math.sqrt(cfg["cells"] / lam_s)
    w = Window.from_bounds(0.0, 0.0, side, side)
    rows = []
    for rep in range(cfg["reps"]):
        seeds = sample_seeds(w, lam_s, RngStream(cfg["seed"], rep))
        st = compute_stats(build_tessellation(seeds), cfg["margin"])
        rec = {"kind": "stats", "rep": rep, "gamma_hat": st.gamma_hat, "lbar_hat": st.lbar_hat,
               "edge_count": st.edge_count, "vertex_count": st.vertex_count}
        rows.append(rec)
        sink.write(rec)
    g = float(np.mean([r["gamma_hat"] for r in rows]))
    lb = float(np.mean([r["lbar_hat"] for r in rows]))
    sink.write({"kind": "stats_summary", "lambda_S": lam_s, "reps": cfg["reps"], "margin": cfg["margin"],
                "gamma_hat": g, "lbar_hat": lb, "gamma": 2 * math.sqrt(lam_s),
                "lbar": 2 / (3 * math.sqrt(lam_s)), "master_seed": cfg["seed"]})
    if figure is not None:
        from .report import plot_tessellation_stats
        plot_tessellation_stats(rows, figure, lam_s)
    return f"gamma_hat={g:.4f} (2sqrt(lambdaS)={2 * math.sqrt(lam_s):.4f}) lbar_hat={lb:.4f}"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def export_csv(results_path: Path, out_path: Path) -> int:
    """Write one CSV row per estimate record; returns the row count."""
    rows = read_results(results_path)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in rows:
            w.writerow([_fmt(rec.get(c)) for c in CSV_COLUMNS])
    return len(rows)


def read_results(results_path: Path) -> list[dict]:
    """Estimate records of a results file (manifest checked, other kinds skipped)."""
    rows = []
    with open(results_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ValueError(f"line {lineno}: record is not an object")
            if lineno == 1:
                if rec.get("kind") != "manifest":
                    raise ValueError("line 1: missing manifest record")
                continue
            if rec.get("kind") == "estimate":
                missing = [c for c in CSV_COLUMNS if c not in rec]
                if missing:
                    raise ValueError(f"line {lineno}: estimate record lacks {', '.join(missing)}")
                rows.append(rec)
    return rows


def cmd_export(args) -> str:
    n = export_csv(args.results, args.csv_out)
    if args.figure is not None:
        from .report import plot_crossing_curve
        rows = read_results(args.results)
        axis = args.axis or ("axis_value" if rows and "axis_value" in rows[0] else "p")
        if rows:
            plot_crossing_curve(rows, axis, args.figure)
    return f"{n} rows -> {args.csv_out}"


HANDLERS = {"estimate": cmd_estimate, "sweep": cmd_sweep, "critical": cmd_critical,
            "diagnose": cmd_diagnose, "stats": cmd_stats}


def run(argv=None) -> int:
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        if args.command == "export":
            print(cmd_export(args))
            return 0
        cfg = effective_config(args.command, args)
        params_from(cfg)
    except ConfigError as exc:
        print(f"losperc: config error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"losperc: {exc}", file=sys.stderr)
        return 2 if args is not None and args.command == "export" else 1
    except OSError as exc:
        print(f"losperc: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    try:
        sink = _Sink(args.out)
    except OSError as exc:
        print(f"losperc: cannot write {args.out}: {exc}", file=sys.stderr)
        return 2
    try:
        sink.write(_manifest(args.command, cfg, args.out))
        summary = HANDLERS[args.command](cfg, sink, args.figure)
    except ConfigError as exc:
        print(f"losperc: config error: {exc}", file=sys.stderr)
        return 1
    except (BracketError, NonMonotoneError, RuntimeError, ValueError, OSError) as exc:
        print(f"losperc: {exc}", file=sys.stderr)
        return 2
    finally:
        sink.close()
    print(f"{args.command}: {summary}", file=sys.stderr if sink.fh is sys.stdout else sys.stdout)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
