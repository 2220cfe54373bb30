"""Binary response datasets and CSV ingestion."""

from __future__ import annotations

import numpy as np

__all__ = ["BinaryDataset", "load_csv", "save_csv"]


class BinaryDataset:
    """An N x J matrix of {0,1} responses with cached sufficient statistics.

    The float copy of the responses, the Gram matrix X'X, and the column
    sums are computed once here; estimation code reads these caches instead
    of re-scanning the raw responses.  Instances are immutable after
    construction and safe to share across threads and processes.

    N = 0 is tolerated (empty simulated datasets); fitting routines require
    N >= 1 and check it themselves.
    """

    def __init__(self, responses) -> None:
        resp = np.asarray(responses)
        if resp.ndim != 2:
            raise ValueError(f"responses must be a 2-D array, got shape {resp.shape}")
        n, j = resp.shape
        if j < 2:
            raise ValueError(f"need at least 2 items, got J={j}")
        if n > 0 and not np.isin(resp, (0, 1)).all():
            raise ValueError("responses must contain only 0 and 1")
        self.responses = resp.astype(np.int8)
        self.n_subjects = n
        self.n_items = j
        self.x = self.responses.astype(np.float64)
        self.xtx = self.x.T @ self.x
        self.col_sums = self.x.sum(axis=0)
        for arr in (self.responses, self.x, self.xtx, self.col_sums):
            arr.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_subjects, self.n_items

    def __repr__(self) -> str:
        return f"BinaryDataset(N={self.n_subjects}, J={self.n_items})"

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryDataset) and np.array_equal(
            self.responses, other.responses
        )


def load_csv(path) -> BinaryDataset:
    """Read a dataset: one row per subject, comma-separated 0/1 fields.

    A single header row is auto-detected (any non-numeric field in the
    first row) and skipped.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")

    rows = [ln.split(",") for ln in lines]
    start = 0
    if any(not _is_numeric(f) for f in rows[0]):
        start = 1
        if len(rows) == 1:
            raise ValueError(f"{path}: header only, no data rows")

    width = len(rows[start])
    out = np.empty((len(rows) - start, width), dtype=np.int8)
    for r, row in enumerate(rows[start:], start=start):
        if len(row) != width:
            raise ValueError(f"{path}: row {r + 1} has {len(row)} fields, expected {width}")
        for c, field in enumerate(row):
            f = field.strip()
            if f == "0":
                out[r - start, c] = 0
            elif f == "1":
                out[r - start, c] = 1
            else:
                raise ValueError(f"{path}: row {r + 1}, column {c + 1}: {field!r} is not 0 or 1")
    return BinaryDataset(out)


def save_csv(data: BinaryDataset, path) -> None:
    """Write a dataset in the same format `load_csv` reads (no header)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in data.responses:
            fh.write(",".join("1" if v else "0" for v in row))
            fh.write("\n")


def _is_numeric(field: str) -> bool:
    try:
        float(field.strip())
    except ValueError:
        return False
    return True
