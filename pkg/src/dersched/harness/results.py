"""Line-delimited records and column-aligned summaries."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Optional, Union

from .scenario import GapReport, TimingReport

__all__ = ["FORMATS", "as_records", "format_records", "format_table", "emit_results"]

FORMATS = ("records", "table")


def as_records(report) -> list:
    """Flatten a report into dicts with a fixed key order."""
    if isinstance(report, GapReport):
        return [r.record() for r in report.rows]
    if isinstance(report, TimingReport):
        rows = [r.record() for r in report.rows]
        rows.append({"fit": "lsps_linear", "slope": report.slope,
                     "intercept": report.intercept, "r_squared": report.r_squared})
        return rows
    out = []
    for r in report:
        out.append(dict(r) if isinstance(r, dict) else r.record())
    return out


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def format_records(records: Iterable[dict]) -> str:
    lines = [json.dumps({k: _clean(v) for k, v in r.items()}, allow_nan=False)
             for r in records]
    return "\n".join(lines) + ("\n" if lines else "")


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def format_table(records: Iterable[dict]) -> str:
    """Column-aligned text table; columns are the union of keys in first-seen order."""
    records = list(records)
    if not records:
        return ""
    cols = []
    for r in records:
        cols.extend(k for k in r if k not in cols)
    body = [[_cell(r.get(c)) for c in cols] for r in records]
    widths = [max(len(c), *(len(row[i]) for row in body)) for i, c in enumerate(cols)]
    fmt = lambda row: "  ".join(s.rjust(w) for s, w in zip(row, widths)).rstrip()
    lines = [fmt(cols), fmt(["-" * w for w in widths])] + [fmt(row) for row in body]
    return "\n".join(lines) + "\n"


def emit_results(report, format: str = "records", out: Optional[Union[str, Path]] = None,
                 name: str = "results", header: Optional[str] = None) -> Union[str, list]:
    """Write ``report`` to ``out`` or return it as text.

    With a directory, ``records`` writes ``<name>.jsonl`` and ``table``
    writes the same records plus ``<name>.txt``. Without one, the formatted
    text is returned. ``header`` is prepended to the table as ``#`` lines.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    records = as_records(report)
    table = format_table(records)
    if header:
        table = "".join(f"# {line}\n" for line in header.splitlines()) + table
    if out is None:
        return format_records(records) if format == "records" else table
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{name}.jsonl"]
    paths[0].write_text(format_records(records), encoding="utf-8")
    if format == "table":
        paths.append(out / f"{name}.txt")
        paths[1].write_text(table, encoding="utf-8")
    return paths
