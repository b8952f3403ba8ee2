"""JSON persistence of experiment records.

Complex entries are stored as ``[re, im]`` pairs in row-major order with the
chi basis ``(I, X, Y, Z)``.  Floats are written with Python's shortest
round-trip representation, so reading an archive and writing it again
reproduces the same bytes.  Failed replicas hold NaN in memory and ``null`` on
disk.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .channels import Member
from .experiment import Cell, ExperimentRecord, MissingCellError, RunConfig

ARCHIVE_FORMAT = "chanadd-chi-archive"
ARCHIVE_VERSION = 1


class ArchiveSchemaError(ValueError):
    pass


def _num(x: float):
    x = float(x)
    return None if math.isnan(x) else x


def _den(x) -> float:
    return math.nan if x is None else float(x)


def encode_matrix(M: np.ndarray) -> list:
    return [[[_num(z.real), _num(z.imag)] for z in row] for row in np.asarray(M, dtype=complex)]


def decode_matrix(rows) -> np.ndarray:
    return np.array([[complex(_den(re), _den(im)) for re, im in row] for row in rows], dtype=complex)


def _encode_cell(c: Cell) -> dict:
    return {
        "member": c.member.value,
        "time_index": c.time_index,
        "t": c.t,
        "ideal_chi": encode_matrix(c.ideal_chi),
        "chis": [encode_matrix(m) for m in c.chis],
        "fidelities": [_num(f) for f in c.fidelities],
        "failed": [bool(f) for f in c.failed],
        "converged": [bool(f) for f in c.converged],
        "flags": list(c.flags),
    }


def _decode_cell(d: dict) -> Cell:
    return Cell(
        Member(d["member"]),
        int(d["time_index"]),
        float(d["t"]),
        decode_matrix(d["ideal_chi"]),
        np.array([decode_matrix(m) for m in d["chis"]], dtype=complex).reshape(-1, 4, 4),
        np.array([_den(f) for f in d["fidelities"]], dtype=float),
        np.array(d["failed"], dtype=bool),
        np.array(d["converged"], dtype=bool),
        list(d["flags"]),
    )


def to_document(record: ExperimentRecord) -> dict:
    cfg = record.config
    grid = record.grid
    return {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "metadata": {
            "tool": "chanadd",
            "tool_version": __version__,
            "scenario": cfg.scenario.value,
            "mode": cfg.mode.value,
            "seed": cfg.base_seed,
            "shots": cfg.shots,
            "replicas": cfg.effective_replicas,
            "epsilon": grid.epsilon,
            "grid": {"base_times": list(grid.base_times), "times": list(grid.times)},
            "config": cfg.to_dict(execution=False),
        },
        "cells": [_encode_cell(record.cells[k]) for k in sorted(record.cells, key=lambda k: (k[0].value, k[1]))],
    }


def dumps(record: ExperimentRecord) -> str:
    return json.dumps(to_document(record), separators=(",", ":"), allow_nan=False) + "\n"


def write(record: ExperimentRecord, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(record), encoding="utf-8")
    return path


def from_document(doc: dict) -> ExperimentRecord:
    """Rebuild a record, checking format, version, grid and cell coverage.

    Raises :class:`ArchiveSchemaError` for a foreign or malformed document and
    :class:`~chanadd.experiment.MissingCellError` when a (member, time) cell
    of the grid is absent.
    """
    if not isinstance(doc, dict) or doc.get("format") != ARCHIVE_FORMAT:
        found = doc.get("format") if isinstance(doc, dict) else type(doc).__name__
        raise ArchiveSchemaError(f"expected format {ARCHIVE_FORMAT!r}, found {found!r}")
    if doc.get("version") != ARCHIVE_VERSION:
        raise ArchiveSchemaError(f"expected archive version {ARCHIVE_VERSION}, found {doc.get('version')!r}")
    try:
        meta = doc["metadata"]
        config = RunConfig(**meta["config"])
        grid = config.grid()
        if [float(t) for t in meta["grid"]["times"]] != list(grid.times):
            raise ArchiveSchemaError("stored time grid does not match the grid implied by the config")
        cells = {}
        for d in doc["cells"]:
            c = _decode_cell(d)
            if c.chis.shape[0] != config.effective_replicas:
                raise ArchiveSchemaError(
                    f"cell {c.member.value} t={c.t!r} has {c.chis.shape[0]} replicas, expected {config.effective_replicas}"
                )
            cells[(c.member, c.time_index)] = c
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ArchiveSchemaError):
            raise
        raise ArchiveSchemaError(f"malformed archive: {type(exc).__name__}: {exc}") from None
    for m in config.members:
        for i, t in enumerate(grid.times):
            if (m, i) not in cells:
                raise MissingCellError(m, t)
    return ExperimentRecord(config, grid, cells, dict(meta))


def loads(text: str) -> ExperimentRecord:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArchiveSchemaError(f"archive is not valid JSON: {exc}") from None
    return from_document(doc)


def read(path) -> ExperimentRecord:
    return loads(Path(path).read_text(encoding="utf-8"))
