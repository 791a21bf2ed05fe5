"""Feature streams from CSV: one row per step, numeric columns, and an
optional label column where a blank cell means unlabeled."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import InputDataError
from ..phmm import ObservationStream


def read_feature_csv(path, label_column: str = "label"):
    """Return ``(observations, labels)``; labels are 0 where blank and
    None when the file has no label column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputDataError(f"{path}: empty file") from None
        has_label = label_column in header
        li = header.index(label_column) if has_label else -1
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise InputDataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                rows.append([float(v) for i, v in enumerate(rec) if i != li])
                if has_label:
                    cell = rec[li].strip()
                    labels.append(int(cell) if cell else 0)
            except ValueError as exc:
                raise InputDataError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise InputDataError(f"{path}: no data rows")
    Y = np.asarray(rows, dtype=float)
    return Y, (np.asarray(labels, dtype=np.int64) if has_label else None)


def write_feature_csv(path, observations, labels=None, label_column: str = "label") -> None:
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    header = [f"y{j + 1}" for j in range(Y.shape[1])]
    if labels is not None:
        header.append(label_column)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(Y):
            rec = [repr(float(v)) for v in row]
            if labels is not None:
                rec.append(str(int(labels[i])) if labels[i] > 0 else "")
            w.writerow(rec)


def split_initial(observations, labels, t_init: int):
    """Initial in-control block as a stream plus the remaining rows."""
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    if not 0 < t_init < len(Y):
        raise InputDataError(f"t_init={t_init} must lie in 1..{len(Y) - 1} for {len(Y)} rows")
    return ObservationStream.with_initial_ic(Y[:t_init], t_init), Y[t_init:]
