"""Study results and their flat-file outputs (CSV, JSON manifest, plot data)."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..stats import SlopeFit


@dataclass
class Series:
    """One plotted series: x, y and optional y standard errors."""

    name: str
    x: list
    y: list
    yerr: list | None = None
    fit: SlopeFit | None = None


@dataclass
class StudyResult:
    kind: str
    config: dict
    table: list  # rows (dicts with identical keys) for the CSV
    series: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)  # name -> bool
    notes: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "seed": self.config.get("seed"),
            "verdicts": {k: bool(v) for k, v in self.verdicts.items()},
            "passed": self.passed,
            "fits": {s.name: s.fit.as_dict() for s in self.series if s.fit is not None},
            "notes": _plain(self.notes),
            "wall_clock_seconds": self.wall_clock,
        }


def _plain(obj):
    """JSON-ready copy: numpy scalars/arrays and fits become plain values."""
    if isinstance(obj, SlopeFit):
        return obj.as_dict()
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def fmt(v) -> str:
    """Full-precision, platform-stable text for CSV cells."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def preflight(out_dir) -> None:
    """Fail before any computation when the output directory is not writable."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        fd, probe = tempfile.mkstemp(dir=out_dir)
        os.close(fd)
        os.remove(probe)
    except OSError as exc:
        raise PermissionError(f"output directory {out_dir!r} is not writable: {exc}") from None


def write_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not rows:
            return
        keys = list(rows[0].keys())
        w.writerow(keys)
        for r in rows:
            w.writerow([fmt(r[k]) for k in keys])


def fit_rows(result: StudyResult) -> list:
    rows = []
    for s in result.series:
        if s.fit is not None:
            f = s.fit
            rows.append({"series": s.name, "slope": f.slope, "intercept": f.intercept, "ci_low": f.ci_low,
                         "ci_high": f.ci_high, "r2": f.r2, "stderr": f.stderr})
    return rows


def emit_outputs(result: StudyResult, out_dir) -> dict:
    """<kind>.csv, <kind>_fits.csv, <kind>_plot.csv and <kind>.json; returns the paths."""
    preflight(out_dir)
    stem = os.path.join(out_dir, result.kind)
    paths = {"csv": stem + ".csv", "fits": stem + "_fits.csv", "plot": stem + "_plot.csv", "json": stem + ".json"}
    write_csv(result.table, paths["csv"])
    write_csv(fit_rows(result), paths["fits"])
    plot = []
    for s in result.series:
        for i, (x, y) in enumerate(zip(s.x, s.y)):
            plot.append({"series": s.name, "x": x, "y": y, "yerr": s.yerr[i] if s.yerr is not None else 0.0})
    write_csv(plot, paths["plot"])
    with open(paths["json"], "w") as fh:
        json.dump(_plain(result.manifest()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
