"""Subject-by-referential observation panels."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or invalid observation input."""


@dataclass(frozen=True, eq=False)
class ObservationMatrix:
    """n subjects (rows) observed in t referentials (columns).

    The values array is copied and marked read-only on construction.
    """

    values: np.ndarray
    row_labels: tuple | None = None
    col_labels: tuple | None = None
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise DataError(f"expected a 2-d array, got shape {arr.shape}")
        n, t = arr.shape
        if n < 2:
            raise DataError(f"need at least 2 subjects, got n={n}")
        if t < 1:
            raise DataError("need at least 1 referential")
        bad = ~np.isfinite(arr)
        if bad.any():
            i, j = map(int, np.argwhere(bad)[0])
            raise DataError(f"non-finite value at row {i}, column {j}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if self.row_labels is not None and len(self.row_labels) != n:
            raise DataError("row label count does not match n")
        if self.col_labels is not None and len(self.col_labels) != t:
            raise DataError("column label count does not match t")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def transpose(self) -> "ObservationMatrix":
        return ObservationMatrix(self.values.T, self.col_labels, self.row_labels)

    def with_values(self, values) -> "ObservationMatrix":
        return ObservationMatrix(values, self.row_labels, self.col_labels)

    def __eq__(self, other):
        if not isinstance(other, ObservationMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    __hash__ = None


HIGH = "high"
LOW = "low"


def parse_directions(spec: str | Sequence[str], t: int) -> tuple[str, ...]:
    """Parse ``"high,low,..."`` (or a sequence) into a validated direction tuple.

    A single entry is broadcast to all ``t`` columns.
    """
    items = spec.split(",") if isinstance(spec, str) else list(spec)
    items = [s.strip().lower() for s in items]
    if len(items) == 1 and t != 1:
        items = items * t
    for s in items:
        if s not in (HIGH, LOW):
            raise DataError(f"direction must be 'high' or 'low', got {s!r}")
    if len(items) != t:
        raise DataError(f"direction list has {len(items)} entries, data has t={t} columns")
    return tuple(items)


def apply_direction(m: ObservationMatrix, directions: Sequence[str]) -> ObservationMatrix:
    """Negate every monitor-low column so that large values are always the anomalous side."""
    directions = parse_directions(directions, m.t)
    sign = np.array([-1.0 if d == LOW else 1.0 for d in directions])
    return m.with_values(m.values * sign)


def load_csv(path, has_header: bool = False, transpose: bool = False) -> ObservationMatrix:
    """Read a comma-separated panel; rows are subjects unless ``transpose``.

    Missing, empty or non-numeric cells are an error (no imputation).
    """
    text = Path(path).read_text(encoding="utf-8-sig")
    return parse_csv(text, has_header=has_header, transpose=transpose)


def parse_csv(text: str, has_header: bool = False, transpose: bool = False) -> ObservationMatrix:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    header = None
    if has_header:
        if not rows:
            raise DataError("header requested but file is empty")
        header, rows = tuple(c.strip() for c in rows[0]), rows[1:]
    if not rows:
        raise DataError("no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"ragged input: row {i} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            s = cell.strip()
            try:
                x = float(s)
            except ValueError:
                raise DataError(f"cannot parse cell at row {i}, column {j}: {cell!r}") from None
            if not np.isfinite(x):
                raise DataError(f"missing or non-finite cell at row {i}, column {j}: {cell!r}")
            out[i, j] = x
    if header is not None and len(header) != width:
        raise DataError(f"header has {len(header)} names, rows have {width} cells")
    m = ObservationMatrix(out, col_labels=header)
    return m.transpose() if transpose else m


def to_csv(m: ObservationMatrix, path=None, header: bool = False) -> str:
    """Serialize with shortest round-trip float repr (``repr``), so reload is exact."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(m.col_labels or [f"c{j}" for j in range(m.t)])
    for row in m.values:
        w.writerow([repr(float(x)) for x in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
