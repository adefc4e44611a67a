"""
On-disk formats: trace CSV, report JSON, trajectory CSV and summary tables.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

from diagnostics import TRACE_COLUMNS, TraceRow
from flow import Trajectory

PathLike = Union[str, Path]


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _ensure_parent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def artifact_paths(prefix: PathLike) -> dict[str, Path]:
    prefix = Path(prefix)
    return {
        "trace": prefix.with_name(f"{prefix.name}_trace.csv"),
        "report": prefix.with_name(f"{prefix.name}_report.json"),
        "summary": prefix.with_name(f"{prefix.name}_summary.csv"),
    }


def write_table(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = _ensure_parent(Path(path))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_trace(path: PathLike, trace: Sequence[TraceRow]) -> Path:
    return write_table(path, TRACE_COLUMNS, ([row.as_record()[c] for c in TRACE_COLUMNS] for row in trace))


def read_trace(path: PathLike) -> list[TraceRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
        return [TraceRow.from_record(record) for record in reader]


def write_json(path: PathLike, payload: dict) -> Path:
    path = _ensure_parent(Path(path))
    path.write_text(json.dumps(payload, indent=2, sort_keys=False, allow_nan=False) + "\n")
    return path


def read_json(path: PathLike) -> dict:
    return json.loads(Path(path).read_text())


def write_trajectory(path: PathLike, trajectory: Trajectory) -> Path:
    dim = trajectory.states[0].size if trajectory.states else 0
    header = ["t", *(f"x_{i + 1}" for i in range(dim)), "dist_ref", "gap"]
    rows = (
        [t, *state.tolist(), d, g]
        for t, state, d, g in zip(trajectory.times, trajectory.states, trajectory.dist_ref, trajectory.gap)
    )
    return write_table(path, header, rows)
