"""Tabular dataset loading, validation, splitting, and summaries.

This module owns every row/column indexing convention used downstream:
a `Table` is an immutable n x d float matrix plus a boolean missing-value
mask, a fully observed numeric target vector, and the ordered feature
names from the CSV header. Matrix cells at masked positions hold NaN.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import rng_from

# Cell tokens treated as a missing value, compared case-insensitively
# after stripping surrounding whitespace. An empty cell is also missing.
MISSING_TOKENS = frozenset({"", "na", "nan"})


class MissingTargetColumn(ValueError):
    """The requested target column is not in the CSV header."""


class NonNumericColumn(ValueError):
    """A column contains a cell that is neither numeric nor a missing token."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        msg = f"column {name!r} is not numeric"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EmptyTable(ValueError):
    """No usable rows (or no feature columns) remain after loading."""


class DegenerateSplit(ValueError):
    """A requested split would leave one side empty."""


class KTooLarge(ValueError):
    """More cross-validation folds than rows."""


@dataclass(frozen=True)
class Table:
    """Immutable columnar dataset.

    rows[i, j] is NaN exactly where missing_mask[i, j] is True. The target
    is never missing; rows whose target cell was blank are dropped at load
    time and counted in `dropped_rows`. Arrays are locked read-only so a
    Table can be shared freely across threads and processes.
    """

    feature_names: tuple[str, ...]
    rows: np.ndarray
    missing_mask: np.ndarray
    target: np.ndarray
    target_name: str
    dropped_rows: int = 0

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        mask = np.ascontiguousarray(self.missing_mask, dtype=bool)
        target = np.ascontiguousarray(self.target, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-D matrix")
        n, d = rows.shape
        if n < 1 or d < 1:
            raise EmptyTable(f"table must have n >= 1 and d >= 1, got {n}x{d}")
        if mask.shape != rows.shape:
            raise ValueError("missing_mask shape must match rows")
        if target.shape != (n,):
            raise ValueError("target length must equal row count")
        if not np.all(np.isfinite(target)):
            raise ValueError("target must be fully observed and finite")
        names = tuple(self.feature_names)
        if len(names) != d:
            raise ValueError("feature_names length must equal column count")
        if len(set(names)) != d or any(not name for name in names):
            raise ValueError("feature names must be unique and non-empty")
        if not self.target_name:
            raise ValueError("target_name must be non-empty")
        # Keep mask and NaN placement in lockstep.
        rows = rows.copy()
        rows[mask] = np.nan
        if np.isnan(rows[~mask]).any():
            raise ValueError("unmasked cells must hold finite values")
        for arr in (rows, mask, target):
            arr.flags.writeable = False
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "missing_mask", mask)
        object.__setattr__(self, "target", target)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None

    def subset(self, indices: np.ndarray) -> "Table":
        """New Table holding the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size == 0:
            raise EmptyTable("row subset is empty")
        return Table(
            feature_names=self.feature_names,
            rows=self.rows[idx],
            missing_mask=self.missing_mask[idx],
            target=self.target[idx],
            target_name=self.target_name,
        )


@dataclass(frozen=True)
class FoldPlan:
    """Cross-validation fold assignment.

    assignment[i] is the fold index of row i. The plan is a pure function
    of (n, k, seed) so every consumer sees identical folds.
    """

    k: int
    assignment: np.ndarray

    def __post_init__(self):
        assignment = np.ascontiguousarray(self.assignment, dtype=np.int64)
        assignment.flags.writeable = False
        object.__setattr__(self, "assignment", assignment)

    def holdout_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def training_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


@dataclass(frozen=True)
class FeatureSummary:
    name: str
    missing_rate: float
    minimum: float
    maximum: float
    mean: float
    constant: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "missing_rate": self.missing_rate,
            "min": self.minimum,
            "max": self.maximum,
            "mean": self.mean,
            "constant": self.constant,
        }


@dataclass(frozen=True)
class TableSummary:
    n: int
    d: int
    target_name: str
    features: tuple[FeatureSummary, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "target": self.target_name,
            "features": [f.to_dict() for f in self.features],
        }


def _parse_cell(cell: str) -> float:
    """Numeric value of a cell, NaN for a missing token, ValueError otherwise."""
    text = cell.strip()
    if text.casefold() in MISSING_TOKENS:
        return math.nan
    return float(text)


def load_csv(path, target_name: str) -> Table:
    """Load a comma-separated, header-first numeric dataset.

    Empty cells and the tokens NA/NaN (any case) become missing values.
    Rows whose target cell is missing are dropped and counted in
    Table.dropped_rows. Any other non-numeric cell rejects its whole
    column with NonNumericColumn. Column order follows the header.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyTable(f"{path}: file has no header row") from None
        header = [name.strip() for name in header]
        if len(set(header)) != len(header):
            raise ValueError(f"{path}: duplicate column names in header")
        if target_name not in header:
            raise MissingTargetColumn(
                f"{path}: target column {target_name!r} not in header {header}"
            )
        target_pos = header.index(target_name)
        feature_names = tuple(h for i, h in enumerate(header) if i != target_pos)
        if not feature_names:
            raise EmptyTable(f"{path}: no feature columns besides the target")

        kept_rows: list[list[float]] = []
        target_vals: list[float] = []
        dropped = 0
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise ValueError(
                    f"{path}:{line_no}: expected {len(header)} cells, got {len(record)}"
                )
            try:
                y = _parse_cell(record[target_pos])
            except ValueError:
                raise NonNumericColumn(
                    target_name, f"line {line_no}, cell {record[target_pos]!r}"
                ) from None
            if math.isnan(y):
                dropped += 1
                continue
            parsed = []
            for i, cell in enumerate(record):
                if i == target_pos:
                    continue
                name = header[i]
                try:
                    parsed.append(_parse_cell(cell))
                except ValueError:
                    raise NonNumericColumn(
                        name, f"line {line_no}, cell {cell!r}"
                    ) from None
            kept_rows.append(parsed)
            target_vals.append(y)

    if not kept_rows:
        raise EmptyTable(f"{path}: zero usable rows (dropped {dropped})")
    rows = np.array(kept_rows, dtype=np.float64)
    mask = np.isnan(rows)
    return Table(
        feature_names=feature_names,
        rows=rows,
        missing_mask=mask,
        target=np.array(target_vals, dtype=np.float64),
        target_name=target_name,
        dropped_rows=dropped,
    )


def write_csv(table: Table, path) -> None:
    """Write a Table back to CSV; exact inverse of load_csv.

    Floats are rendered with repr(), the shortest decimal string that
    round-trips binary64, and missing cells are written empty.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(table.feature_names) + [table.target_name])
        for i in range(table.n):
            record = [
                "" if table.missing_mask[i, j] else repr(float(table.rows[i, j]))
                for j in range(table.d)
            ]
            record.append(repr(float(table.target[i])))
            writer.writerow(record)


def train_test_split(
    table: Table, train_fraction: float, seed: int
) -> tuple[Table, Table]:
    """Deterministic shuffled prefix split.

    Rows are permuted by the seeded generator, the first
    floor(train_fraction * n) go to the training part, and each part keeps
    its rows in original order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = table.n
    if n < 2:
        raise DegenerateSplit("need at least 2 rows to split")
    n_train = int(math.floor(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DegenerateSplit(
            f"split of {n} rows at fraction {train_fraction} leaves one side empty"
        )
    perm = rng_from(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return table.subset(train_idx), table.subset(test_idx)


def kfold_split(table: Table, k: int, seed: int) -> FoldPlan:
    """Balanced fold assignment, a pure function of (n, k, seed)."""
    n = table.n
    if k > n:
        raise KTooLarge(f"k={k} exceeds row count {n}")
    if k < 2:
        raise ValueError("k must be at least 2")
    perm = rng_from(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldPlan(k=k, assignment=assignment)


def summarize(table: Table) -> TableSummary:
    """Per-feature missing rates and value ranges.

    Columns with at most one distinct present value are flagged constant;
    they add nothing for training and are the usual removal candidates.
    """
    features = []
    for j, name in enumerate(table.feature_names):
        col = table.rows[:, j]
        present = col[~table.missing_mask[:, j]]
        missing_rate = float(table.missing_mask[:, j].mean())
        if present.size == 0:
            features.append(
                FeatureSummary(name, missing_rate, math.nan, math.nan, math.nan, True)
            )
            continue
        features.append(
            FeatureSummary(
                name=name,
                missing_rate=missing_rate,
                minimum=float(present.min()),
                maximum=float(present.max()),
                mean=float(present.mean()),
                constant=bool(np.all(present == present[0])),
            )
        )
    return TableSummary(
        n=table.n, d=table.d, target_name=table.target_name, features=tuple(features)
    )
