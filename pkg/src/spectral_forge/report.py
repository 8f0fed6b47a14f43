"""Report serialization: JSON, aligned text table, CSV curves, timing sidecar."""

from __future__ import annotations

import io
import json
import time
from pathlib import Path

import numpy as np

from .experiments import ExperimentReport
from .io_utils import atomic_write_text

FORMATS = ("json", "table", "csv")


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"


def report_table(report: ExperimentReport, keys=None) -> str:
    """One row per fold plus mean and std rows; columns aligned."""
    agg = report.aggregate
    keys = list(agg) if keys is None else list(keys)
    header = ["fold"] + keys
    rows = []
    for f in report.folds:
        rows.append([str(f["fold"])] + [_fmt(f["metrics"].get(k)) for k in keys])
    rows.append(["mean"] + [_fmt(agg[k]["mean"]) for k in keys])
    rows.append(["std"] + [_fmt(agg[k]["std"]) for k in keys])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
             for r in [header] + rows]
    return f"# {report.experiment_kind} (seed {report.seed})\n" + "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "-"
    return f"{v:.4f}"


def curves_csv(report: ExperimentReport) -> str:
    """Long format: ``fold,curve,epoch,value``."""
    buf = io.StringIO()
    buf.write("fold,curve,epoch,value\n")
    for f in report.folds:
        for name, vals in sorted(f.get("curves", {}).items()):
            for e, v in enumerate(vals):
                buf.write(f"{f['fold']},{name},{e},{float(v)!r}\n")
    return buf.getvalue()


def array_csv(arr) -> str:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    return "\n".join(",".join(repr(float(x)) for x in row) for row in arr.T) + "\n"


def emit_report(report: ExperimentReport, out_dir, formats=FORMATS, stem: str = "report") -> list[Path]:
    """Write the requested formats atomically; returns the written paths.

    Wall-clock time goes to ``<stem>.timing.json`` so the JSON report is a
    pure function of inputs and seed.
    """
    out = Path(out_dir)
    written = []
    for fmt in formats:
        if fmt not in FORMATS:
            raise ValueError(f"unknown report format {fmt!r}")
    if "json" in formats:
        p = out / f"{stem}.json"
        atomic_write_text(p, report_json(report))
        written.append(p)
    if "table" in formats:
        p = out / f"{stem}.txt"
        atomic_write_text(p, report_table(report))
        written.append(p)
    if "csv" in formats:
        p = out / f"{stem}_curves.csv"
        atomic_write_text(p, curves_csv(report))
        written.append(p)
        for name, arr in sorted(report.arrays.items()):
            p = out / f"{stem}_{name}.csv"
            atomic_write_text(p, array_csv(arr))
            written.append(p)
    p = out / f"{stem}.timing.json"
    atomic_write_text(p, json.dumps({"wall_clock_s": report.wall_clock, "finished_unix": time.time()}) + "\n")
    written.append(p)
    return written


def load_report(path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
