"""Command-line front end: ``chanadd ideal|simulate|analyze``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (outputs are
still written, with the failures listed in ``flagged.csv``), 4 archive schema
error or missing cell.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import __version__, archive
from . import channels as ch
from . import experiment as ex
from .channels import ChannelModel, Member, Scenario
from .linalg import LinalgError

log = logging.getLogger("chanadd")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_SCHEMA = 4

OUT_ENV = "CHANADD_OUT"
ARCHIVE_NAME = "archive.json"
PROBABILITY_POINTS = 401

_number_list = {"type": "array", "items": {"type": "number"}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scenario": {"enum": [s.value for s in Scenario]},
        "mode": {"enum": [m.value for m in ex.Mode]},
        "shots": {"type": "integer", "minimum": 1},
        "replicas": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "resampling": {"enum": [r.value for r in ex.Resampling]},
        "zero_threshold": {"type": ["number", "null"], "minimum": 0},
        "cond_limit": {"type": "number", "exclusiveMinimum": 1},
        "output_dir": {"type": "string"},
        "base_times": {"oneOf": [_number_list, {"type": "null"}]},
        "s_values": {"oneOf": [_number_list, {"type": "null"}]},
        "members": {"type": "array", "items": {"enum": [m.value for m in Member]}, "minItems": 1, "uniqueItems": True},
        "state_pair": {"type": "array", "items": {"enum": sorted(ex.STATES)}, "minItems": 2, "maxItems": 2},
        "workers": {"type": "integer", "minimum": 1},
        "optimizer": {"enum": ["lbfgs", "simplex"]},
    },
}


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------------------


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {path}: {where}: {exc.message}") from None
    return data


def default_output_dir() -> str:
    return os.environ.get(OUT_ENV, "out")


def build_config(args: argparse.Namespace, mode: ex.Mode) -> ex.RunConfig:
    data = load_config_file(args.config) if getattr(args, "config", None) else {}
    data.setdefault("output_dir", default_output_dir())
    overrides = {
        "scenario": getattr(args, "scenario", None),
        "base_seed": getattr(args, "seed", None),
        "shots": getattr(args, "shots", None),
        "replicas": getattr(args, "replicas", None),
        "epsilon": getattr(args, "epsilon", None),
        "output_dir": getattr(args, "out", None),
        "workers": getattr(args, "workers", None),
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    data["mode"] = mode.value
    try:
        config = ex.RunConfig(**data)
        grid = config.grid()
        for sv in config.s_values or ():
            if not any(abs(sv - u) <= ex.TIME_MATCH_TOL for u in grid.times):
                raise ValueError(f"s value {sv!r} is not a grid time")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return config


# --- CSV output ------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def probability_table(scenario) -> tuple:
    scenario = Scenario(scenario)
    ts = np.linspace(0.0, ex.TIME_BOUNDS[scenario], PROBABILITY_POINTS)
    if scenario is Scenario.CASE_A:
        model = ChannelModel(scenario, Member.TOTAL)
        return ("t", "p"), [(float(t), ch.probability(model, t)) for t in ts]
    w1, w2 = ch.CASE_B_WEIGHTS
    rows = []
    for t in ts:
        p1 = ch.probability(ChannelModel(scenario, Member.CH1), t)
        p2 = ch.probability(ChannelModel(scenario, Member.CH2), t)
        rows.append((float(t), p1, p2, w1 * p1 + w2 * p2, ch.probability(ChannelModel(scenario, Member.TOTAL), t)))
    return ("t", "p1", "p2", "weighted_sum", "p"), rows


def analysis_tables(record: ex.ExperimentRecord, s_values: Optional[Sequence[float]] = None) -> dict:
    """Every figure series of a record, as ``{file name: csv text}``."""
    members = record.members
    s_values = tuple(s_values) if s_values is not None else record.config.resolved_s_values()
    out = {}

    rows = []
    for m in members:
        for t in record.grid.times:
            c = record.cell(m, t)
            f = c.fidelities[~c.failed]
            mean = float(np.mean(f)) if f.size else float("nan")
            std = float(np.std(f, ddof=1)) if f.size > 1 else 0.0
            rows.append((m.value, t, mean, std, int(c.failed.sum())))
    out["fidelity.csv"] = csv_text(("member", "t", "fp_mean", "fp_std", "n_failed"), rows)

    rows = []
    for m in members:
        for s in s_values:
            for t in record.grid.times:
                if t <= s + ex.TIME_MATCH_TOL:
                    continue
                sm = ex.lambda_min_statistics(record, m, s, t)
                rows.append((m.value, s, t, sm.mean, sm.median, sm.std, sm.sem, sm.p05, sm.p95, sm.n, sm.n_flagged))
    out["lambda_min.csv"] = csv_text(
        ("member", "s", "t", "mean", "median", "std", "sem", "p05", "p95", "n", "n_flagged"), rows
    )

    for mode in ex.GbarMode:
        rows = []
        for m in members:
            for p in ex.gbar_series(record, m, mode):
                rows.append((m.value, p.t, p.epsilon, p.gbar, p.std, p.sem, p.n, p.n_flagged, p.flagged))
        out[f"gbar_{mode.value}.csv"] = csv_text(
            ("member", "t", "epsilon", "gbar", "std", "sem", "n", "n_flagged", "flagged"), rows
        )

    rows = []
    for m in members:
        for p in ex.blp_series(record, m):
            rows.append((m.value, p.t, p.state_pair.replace(",", "/"), p.D, p.std))
    out["trace_distance.csv"] = csv_text(("member", "t", "state_pair", "D", "std"), rows)

    rows = []
    for m in members:
        ms = ex.measures(record, m)
        rows.append((m.value, ms.rhp_pairwise, ms.rhp_averaged, ms.blp, ms.n_flagged_points))
    out["measures.csv"] = csv_text(("member", "D_RHP_pairwise", "D_RHP_averaged", "D_BLP", "n_flagged_points"), rows)

    out["flagged.csv"] = csv_text(("member", "t", "kind", "detail"), ex.flagged_report(record))
    return out


def write_tables(tables: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in tables.items():
        (out_dir / name).write_text(text, encoding="utf-8")


def _has_failures(record: ex.ExperimentRecord) -> bool:
    return any(c.failed.any() for c in record.cells.values())


def fidelity_summary(record: ex.ExperimentRecord) -> str:
    lines = [f"{'member':<7} {'t':>8} {'mean F_p':>10} {'std':>10}"]
    good = total = 0
    for m in record.members:
        for t in record.grid.times:
            f = record.cell(m, t).fidelities
            f = f[np.isfinite(f)]
            mean = float(np.mean(f)) if f.size else float("nan")
            std = float(np.std(f, ddof=1)) if f.size > 1 else 0.0
            lines.append(f"{m.value:<7} {t:8.4f} {mean:10.6f} {std:10.6f}")
            total += 1
            good += bool(mean > 0.90)
    lines.append(f"cells with mean F_p > 0.90: {good}/{total}")
    return "\n".join(lines)


# --- commands --------------------------------------------------------------------------


def _finish(record: ex.ExperimentRecord, out_dir: Path, tables: dict) -> int:
    write_tables(tables, out_dir)
    if _has_failures(record):
        log.error("some replicas failed to reconstruct; see %s", out_dir / "flagged.csv")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_ideal(args) -> int:
    config = build_config(args, ex.Mode.IDEAL)
    out_dir = Path(config.output_dir)
    record = ex.run(config)
    archive.write(record, out_dir / ARCHIVE_NAME)
    tables = {"probabilities.csv": csv_text(*probability_table(config.scenario))}
    tables.update(analysis_tables(record))
    print(f"wrote ideal {config.scenario.value} series to {out_dir}")
    return _finish(record, out_dir, tables)


def cmd_simulate(args) -> int:
    config = build_config(args, ex.Mode.SIMULATED)
    out_dir = Path(config.output_dir)
    record = ex.run(config)
    archive.write(record, out_dir / ARCHIVE_NAME)
    print(fidelity_summary(record))
    tables = analysis_tables(record) if args.analyze else {}
    return _finish(record, out_dir, tables)


def cmd_analyze(args) -> int:
    record = archive.read(args.archive)
    out_dir = Path(args.out or default_output_dir())
    record.config = ex.with_overrides(record.config, zero_threshold=args.zero_threshold)
    tables = analysis_tables(record, args.s)
    print(f"analysed {args.archive} into {out_dir}")
    return _finish(record, out_dir, tables)


def _run_flags(p: argparse.ArgumentParser, with_sampling: bool) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--scenario", choices=[s.value for s in Scenario])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    if with_sampling:
        p.add_argument("--seed", type=int)
        p.add_argument("--shots", type=int)
        p.add_argument("--replicas", type=int)
        p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chanadd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ideal", help="write the exact (theory) series")
    _run_flags(p, with_sampling=False)
    p.set_defaults(func=cmd_ideal)

    p = sub.add_parser("simulate", help="simulate tomography replicas and write an archive")
    _run_flags(p, with_sampling=True)
    p.add_argument("--no-analyze", dest="analyze", action="store_false", help="only write the archive")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="derive every series from an archive")
    p.add_argument("archive")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("--s", type=float, action="append", help="lambda_min start time (repeatable)")
    p.add_argument("--zero-threshold", type=float)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except archive.ArchiveSchemaError as exc:
        print(f"archive error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ex.MissingCellError as exc:
        print(f"archive error: missing cell {exc.member.value} at t={exc.t!r}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LinalgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
