"""CSV interchange for observational datasets: columns ``x_1..x_d, t, y`` plus optional oracle columns."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .kte import ObservationalDataset

ORACLE_COLUMNS = ("y0_star", "y1_star", "propensity")


def write_dataset(path, data: ObservationalDataset, comment: str = None) -> Path:
    """Write ``data`` as UTF-8 CSV; floats use the shortest round-trip form.

    Oracle columns are written only when present. ``comment`` becomes a
    leading ``#`` line.
    """
    path = Path(path)
    d = data.x.shape[1]
    columns = [f"x_{j + 1}" for j in range(d)] + ["t", "y"]
    extra = [name for name in ORACLE_COLUMNS if getattr(data, name) is not None]
    columns += extra
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for i in range(len(data)):
            row = [repr(float(v)) for v in data.x[i]] + [str(int(data.t[i])), repr(float(data.y[i]))]
            row += [repr(float(getattr(data, name)[i])) for name in extra]
            writer.writerow(row)
    return path


def read_dataset(path) -> ObservationalDataset:
    """Read a dataset written by :func:`write_dataset` (``#`` lines are skipped)."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: empty dataset file") from None
    x_cols = [i for i, name in enumerate(header) if name.startswith("x_")]
    missing = [name for name in ("t", "y") if name not in header]
    if not x_cols or missing:
        raise ValueError(f"{path}: need x_1..x_d, t and y columns")
    unknown = set(header) - {header[i] for i in x_cols} - {"t", "y", *ORACLE_COLUMNS}
    if unknown:
        raise ValueError(f"{path}: unexpected columns {sorted(unknown)}")
    x_cols.sort(key=lambda i: int(header[i][2:]))
    values = np.array([[float(v) for v in row] for row in reader if row], dtype=float).reshape(-1, len(header))
    col = {name: values[:, i] for i, name in enumerate(header)}
    if not np.all(np.isin(col["t"], (0.0, 1.0))):
        raise ValueError(f"{path}: treatments must be 0 or 1")
    return ObservationalDataset(
        values[:, x_cols],
        col["t"].astype(int),
        col["y"],
        **{name: col.get(name) for name in ORACLE_COLUMNS},
    )
