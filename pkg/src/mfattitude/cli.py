"""Command-line interface.

Subcommands: ``simulate``, ``estimate``, ``observability``, ``density``.
Exit codes: 0 success, 2 usage or configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, observability
from .matrix_fisher import MatrixFisher, sphere_density_rows

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _vector(text):
    try:
        vals = [float(x) for x in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 comma-separated numbers, got {text!r}")
    return vals


def _matrix(text):
    try:
        vals = [float(x) for x in str(text).replace(";", ",").split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 9 comma-separated numbers, got {text!r}") from None
    if len(vals) != 9 or not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError("a matrix needs 9 finite numbers, row-major")
    return vals


def _listing(choices):
    def parse(text):
        items = [x.strip() for x in str(text).split(",") if x.strip()]
        if items == ["all"]:
            return list(choices)
        bad = [x for x in items if x not in choices]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"invalid choice {text!r}; use {', '.join(choices)} or all")
        return items
    return parse


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


# (flag, dest, type, default, help)
SCENARIO_FLAGS = [
    ("--duration", "duration", float, 60.0, "simulated time per run, s"),
    ("--gamma", "gamma", float, 10.0, "gyro random-walk density, deg/sqrt(s)"),
    ("--kappa", "kappa", float, 200.0, "direction measurement concentration"),
    ("--gyro-rate", "gyro_rate", float, 150.0, "gyro rate, Hz"),
    ("--meas-rate", "meas_rate", float, 30.0, "direction measurement rate, Hz"),
    ("--ref", "ref", _vector, [1.0, 0.0, 0.0], "reference vector x,y,z"),
]

COMMANDS = {
    "simulate": [
        ("--combo", "combo", _listing(harness.COMBOS), ["AVI_RVI"], "combination(s), comma separated, or all"),
        ("--estimator", "estimator", _listing(harness.ESTIMATORS), ["matrix_fisher"],
         "estimator(s): matrix_fisher, mekf, or all"),
        ("--runs", "runs", _positive_int, 10, "Monte Carlo runs per combination"),
        ("--seed", "seed", int, None, "base seed, run i uses seed + i (required)"),
        *SCENARIO_FLAGS,
        ("--out", "out", str, ".", "existing output directory"),
        ("--jobs", "jobs", _positive_int, os.cpu_count() or 1, "worker processes"),
    ],
    "estimate": [
        ("--log", "log", str, None, "log CSV to process (required)"),
        ("--estimator", "estimator", _listing(harness.ESTIMATORS), ["matrix_fisher"], "matrix_fisher or mekf"),
        ("--gamma", "gamma", float, 10.0, "gyro random-walk density, deg/sqrt(s)"),
        ("--kappa", "kappa", float, 200.0, "direction measurement concentration"),
        ("--ref", "ref", _vector, [1.0, 0.0, 0.0], "reference vector x,y,z"),
        ("--out", "out", str, ".", "existing output directory"),
    ],
    "observability": [
        ("--f", "f", _matrix, None, "matrix Fisher parameter, 9 numbers row-major"),
        ("--moment", "moment", _matrix, None, "first moment E[R], 9 numbers row-major"),
        ("--t", "t", float, 0.0, "time stamp written to the report row"),
        ("--out", "out", str, None, "optional existing output directory"),
    ],
    "density": [
        ("--f", "f", _matrix, None, "matrix Fisher parameter, 9 numbers row-major (required)"),
        ("--level", "level", int, 3, "icosphere subdivision level"),
        ("--grid-n", "grid_n", _positive_int, 360, "quadrature points over the residual angle"),
        ("--out", "out", str, ".", "existing output directory"),
    ],
}

REQUIRED = {"simulate": ["seed"], "estimate": ["log"], "density": ["f"]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfattitude", description="Matrix Fisher attitude estimation tools.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "Monte Carlo simulation of the filters; writes summary.csv and per-run series",
        "estimate": "run an estimator over a recorded log CSV",
        "observability": "observability report for a parameter F or a first moment",
        "density": "marginal axis densities on an icosphere grid",
    }
    for name, flags in COMMANDS.items():
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", metavar="PATH",
                       help="JSON file with the same keys as the flags (underscored); excludes all other flags")
        for flag, dest, typ, default, text in flags:
            shown = "" if default is None else f" (default: {default})"
            p.add_argument(flag, dest=dest, type=typ, default=None, help=text + shown)
    return parser


def resolve_config(args) -> dict:
    """Merge defaults with either the flags or the JSON config."""
    flags = COMMANDS[args.command]
    given = {dest: getattr(args, dest) for _, dest, *_ in flags if getattr(args, dest) is not None}
    values = {dest: default for _, dest, _, default, _ in flags}
    if args.config:
        if given:
            raise UsageError("--config cannot be combined with other flags")
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        types = {dest: typ for _, dest, typ, _, _ in flags}
        unknown = sorted(set(doc) - set(types))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        for key, raw in doc.items():
            try:
                if isinstance(raw, list):
                    raw = ",".join(str(x) for x in raw)
                values[key] = types[key](raw) if raw is not None else None
            except (argparse.ArgumentTypeError, ValueError, TypeError) as exc:
                raise UsageError(f"bad value for {key!r}: {exc}") from None
    else:
        values.update(given)
    for key in REQUIRED.get(args.command, []):
        if values.get(key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
    return values


def _out_dir(path) -> Path:
    out = Path(path)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    return out


def _scenario(cfg, combo, seed) -> harness.Scenario:
    try:
        return harness.Scenario(
            duration=cfg["duration"], gyro_rate=cfg["gyro_rate"], meas_rate=cfg["meas_rate"],
            gamma=math.radians(cfg["gamma"]), kappa=cfg["kappa"], ref_vector=tuple(cfg["ref"]),
            combo=combo, seed=seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fmt_row(row) -> str:
    return f"{row.estimator:<14}{row.combo:<9}{row.full_mean:9.2f} ± {row.full_sd:<7.2f}{row.partial_mean:9.2f} ± {row.partial_sd:.2f}"


def cmd_simulate(cfg) -> int:
    template = _scenario(cfg, cfg["combo"][0], cfg["seed"])
    out = _out_dir(cfg["out"])
    rows, runs = harness.monte_carlo(template, cfg["runs"], estimators=cfg["estimator"],
                                     combos=cfg["combo"], jobs=cfg["jobs"])
    harness.write_csv(out / "summary.csv", harness.SUMMARY_HEADER, rows)
    series = out / "series"
    series.mkdir(exist_ok=True)
    failed = []
    for (est, combo), results in runs.items():
        for i, res in enumerate(results):
            harness.write_csv(series / f"{est}_{combo}_run{i:03d}.csv", harness.SERIES_HEADER, res.series_rows())
            if not res.ok:
                failed.append(f"{est} {combo} run {i}: {res.diagnostic}")
    print(f"{'estimator':<14}{'combo':<9}{'full error (deg)':>18}{'partial error (deg)':>22}")
    for row in rows:
        print(_fmt_row(row))
    for msg in failed:
        print(f"aborted: {msg}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_estimate(cfg) -> int:
    path = Path(cfg["log"])
    if not path.is_file():
        raise UsageError(f"log file {path} does not exist")
    out = _out_dir(cfg["out"])
    try:
        gyro, directions, truth = harness.ingest_log(path)
    except (harness.ParseError, harness.SchemaError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    if len(cfg["estimator"]) != 1:
        raise UsageError("estimate takes a single estimator")
    est = cfg["estimator"][0]
    res = harness.run_streams(gyro, directions, truth, ref=cfg["ref"], kappa=cfg["kappa"],
                              gamma=math.radians(cfg["gamma"]), estimator=est)
    rows = [[("" if isinstance(x, float) and math.isnan(x) else x) for x in row] for row in res.series_rows()]
    harness.write_csv(out / "series.csv", harness.SERIES_HEADER, rows)
    if not res.ok:
        print(f"aborted: {res.diagnostic}", file=sys.stderr)
        return EXIT_RUNTIME
    if len(res.t):
        print(f"mean full error {res.mean_full:.3f} deg, mean partial error {res.mean_partial:.3f} deg")
    if est == "matrix_fisher" and res.final_state is not None:
        rep = observability.report(res.final_state)
        t_end = float(res.t_meas[-1]) if len(res.t_meas) else 0.0
        harness.write_csv(out / "observability.csv", observability.CSV_HEADER, [rep.csv_row(t_end)])
        _print_report(rep)
    return EXIT_OK


def _print_report(rep: observability.ObservabilityReport):
    print(f"d    = {np.array2string(rep.d, precision=6)}")
    print(f"rho  = {rep.rho:.6g}")
    print(f"fim  = {np.array2string(np.diag(rep.fim_mean), precision=6)}")
    line = f"case = {rep.classification.case}"
    if rep.classification.ambiguity_axis is not None:
        line += f", axis {np.array2string(rep.classification.ambiguity_axis, precision=6)}"
    print(line)


def cmd_observability(cfg) -> int:
    if (cfg["f"] is None) == (cfg["moment"] is None):
        raise UsageError("give exactly one of --f and --moment")
    if cfg["f"] is not None:
        rep = observability.report(MatrixFisher(np.reshape(cfg["f"], (3, 3))))
    else:
        rep = observability.report(np.reshape(cfg["moment"], (3, 3)))
    _print_report(rep)
    if cfg["out"] is not None:
        out = _out_dir(cfg["out"])
        harness.write_csv(out / "observability.csv", observability.CSV_HEADER, [rep.csv_row(cfg["t"])])
    return EXIT_OK


def cmd_density(cfg) -> int:
    if cfg["level"] < 0 or cfg["level"] > 7:
        raise UsageError("--level must be between 0 and 7")
    out = _out_dir(cfg["out"])
    mf = MatrixFisher(np.reshape(cfg["f"], (3, 3)))
    rows = sphere_density_rows(mf, cfg["level"], cfg["grid_n"])
    harness.write_csv(out / "density.csv", ["axis_index", "x", "y", "z", "density"], rows)
    print(f"wrote {len(rows)} rows to {out / 'density.csv'}")
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "estimate": cmd_estimate,
            "observability": cmd_observability, "density": cmd_density}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to exit 3
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
