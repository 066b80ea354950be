"""Long-format plot data from evaluation CSVs (no rendering)."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from .errors import DataError

REQUIRED = ("featureSource", "episodes", "seed", "avgReward", "rmse")
METRICS = ("avgReward", "rmse")
COLUMNS = ("trainingSize", "method", "seed", "metric", "value", "config_hash")


def _read(path) -> list:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED if c not in (reader.fieldnames or ())]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def plot_rows(paths: Sequence) -> list:
    """One row per (method, training size, seed, metric), deterministically ordered."""
    if not paths:
        raise DataError("plotdata needs at least one evaluation CSV")
    rows = []
    for p in paths:
        for r in _read(p):
            for m in METRICS:
                rows.append((int(r["episodes"]), r["featureSource"], int(r["seed"]), m, r[m],
                             r.get("config_hash", "")))
    rows.sort(key=lambda t: (t[3], t[1], t[0], t[2]))
    return rows


def emit_plotdata(paths: Sequence, out) -> int:
    rows = plot_rows(paths)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(rows)
    return len(rows)


def median_by_size(rows: list, method: str, metric: str = "rmse") -> list:
    """(training size, median value) pairs for one method, sorted by size."""
    import numpy as np

    groups: dict = {}
    for size, meth, _, met, val, _ in rows:
        if meth == method and met == metric:
            groups.setdefault(size, []).append(float(val))
    return [(s, float(np.median(v))) for s, v in sorted(groups.items())]
