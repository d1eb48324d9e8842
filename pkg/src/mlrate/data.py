"""Experiment datasets, CSV ingestion, validation and fold assignment."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DataValidationError, InvalidArgumentError, ParseError, SchemaError
from .numerics import RandomStream


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ExperimentDataset:
    """Rows of (outcome, treatment, covariates) from one randomized experiment.

    Arrays are copied to read-only float64 on construction. Row order is the
    identity key: fold assignments and predictions align with it.

    ``extras`` holds additional named numeric columns (for instance a
    precomputed prediction or a pre-period outcome) aligned by row.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    column_names: tuple[str, ...] = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        y = _frozen(self.outcome).reshape(-1)
        t = _frozen(self.treatment).reshape(-1)
        X = np.asarray(self.covariates, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(len(y), 0)
        X = _frozen(X)
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise InvalidArgumentError(
                f"{len(names)} column names given for {X.shape[1]} covariate columns"
            )
        extras = {str(k): _frozen(v).reshape(-1) for k, v in dict(self.extras).items()}
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "extras", extras)

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def features(self, selector: Sequence[str | int] | None = None) -> np.ndarray:
        """Covariate columns picked by name or index (all columns when ``None``)."""
        if selector is None:
            return self.covariates
        idx = []
        for s in selector:
            if isinstance(s, (int, np.integer)):
                if not 0 <= s < self.d:
                    raise SchemaError(f"feature index {s} out of range for {self.d} columns")
                idx.append(int(s))
            else:
                if s not in self.column_names:
                    raise SchemaError(f"unknown feature column {s!r}")
                idx.append(self.column_names.index(s))
        return self.covariates[:, idx]

    def take(self, rows) -> "ExperimentDataset":
        rows = np.asarray(rows)
        return ExperimentDataset(
            self.outcome[rows],
            self.treatment[rows],
            self.covariates[rows],
            self.column_names,
            {k: v[rows] for k, v in self.extras.items()},
        )


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """An experiment together with pre-experiment history aligned by row.

    ``y_pre`` is the outcome one period before the experiment (t-1).
    ``pre_features`` are features measured at t-1 and ``lag_features`` the
    same features one period earlier (t-2); both are optional, but a
    pre-period model needs them (see :func:`mlrate.crossfit.preperiod_fit`).
    """

    data: ExperimentDataset
    y_pre: np.ndarray
    pre_features: np.ndarray | None = None
    lag_features: np.ndarray | None = None

    def __post_init__(self):
        y_pre = _frozen(self.y_pre).reshape(-1)
        if y_pre.shape[0] != self.data.n:
            raise InvalidArgumentError("y_pre must have one entry per experiment row")
        object.__setattr__(self, "y_pre", y_pre)
        for name in ("pre_features", "lag_features"):
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.asarray(value, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1)
            if arr.shape[0] != self.data.n:
                raise InvalidArgumentError(f"{name} must have one row per experiment row")
            object.__setattr__(self, name, _frozen(arr))

    @property
    def n(self) -> int:
        return self.data.n


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    row: int | None = None


def validate(ds: ExperimentDataset) -> list[Violation]:
    """Check every dataset invariant; an empty list means the dataset is usable.

    Codes: ``empty``, ``length-mismatch``, ``non-finite``, ``bad-treatment``,
    ``degenerate-arm``. Row numbers are 1-based.
    """
    out: list[Violation] = []
    n = ds.outcome.shape[0]
    if n == 0:
        return [Violation("empty", "dataset has no rows")]
    lengths = {"treatment": ds.treatment.shape[0], "covariates": ds.covariates.shape[0]}
    lengths.update({f"extra column {k!r}": v.shape[0] for k, v in ds.extras.items()})
    for what, m in lengths.items():
        if m != n:
            out.append(Violation("length-mismatch", f"{what} has {m} rows, outcome has {n}"))
    if out:
        return out

    def first_bad(mask):
        rows = np.flatnonzero(mask)
        return int(rows[0]) + 1 if rows.size else None

    for what, arr in [("outcome", ds.outcome), ("treatment", ds.treatment)]:
        row = first_bad(~np.isfinite(arr))
        if row is not None:
            out.append(Violation("non-finite", f"non-finite {what} at row {row}", row))
    if ds.covariates.size:
        row = first_bad(~np.all(np.isfinite(ds.covariates), axis=1))
        if row is not None:
            out.append(Violation("non-finite", f"non-finite covariate at row {row}", row))
    for name, arr in ds.extras.items():
        row = first_bad(~np.isfinite(arr))
        if row is not None:
            out.append(Violation("non-finite", f"non-finite {name} at row {row}", row))
    row = first_bad(np.isfinite(ds.treatment) & (ds.treatment != 0) & (ds.treatment != 1))
    if row is not None:
        out.append(Violation("bad-treatment", f"treatment not in {{0, 1}} at row {row}", row))
    treated = int(np.count_nonzero(ds.treatment == 1))
    control = int(np.count_nonzero(ds.treatment == 0))
    if treated == 0 or control == 0:
        out.append(Violation(
            "degenerate-arm",
            f"both arms must be non-empty (treated={treated}, control={control})",
        ))
    return out


def require_valid(ds: ExperimentDataset) -> ExperimentDataset:
    problems = validate(ds)
    if problems:
        raise DataValidationError("; ".join(v.message for v in problems))
    return ds


def load_csv(
    path,
    outcome_col: str,
    treatment_col: str,
    feature_cols: Sequence[str] = (),
    extra_cols: Sequence[str] = (),
) -> ExperimentDataset:
    """Read an experiment from a header-first, comma-separated UTF-8 file.

    Missing cells are an error (never imputed). Treatment cells must be the
    literals ``0`` or ``1``. Errors cite 1-based data row numbers.

    Raises
    ------
    SchemaError
        A named column is absent from the header.
    ParseError
        A cell is empty or not a finite decimal number.
    DataValidationError
        A treatment value is not 0/1, or an arm is empty.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, expected a header row") from None
        wanted = [outcome_col, treatment_col, *feature_cols, *extra_cols]
        for col in wanted:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        pos = {name: header.index(name) for name in wanted}
        rows: list[list[float]] = []
        treat: list[float] = []
        for rownum, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise ParseError(
                    f"{path}: row {rownum} has {len(record)} fields, header has {len(header)}"
                )
            cell = record[pos[treatment_col]].strip()
            if cell == "":
                raise ParseError(f"{path}: row {rownum}: missing value in column {treatment_col!r}")
            if cell not in ("0", "1"):
                raise DataValidationError(
                    f"{path}: row {rownum}: treatment {cell!r} in column {treatment_col!r} "
                    "is not 0 or 1"
                )
            treat.append(float(cell))
            values = []
            for col in [outcome_col, *feature_cols, *extra_cols]:
                raw = record[pos[col]].strip()
                if raw == "":
                    raise ParseError(f"{path}: row {rownum}: missing value in column {col!r}")
                try:
                    v = float(raw)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {rownum}: non-numeric value {raw!r} in column {col!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {rownum}: non-finite value in column {col!r}")
                values.append(v)
            rows.append(values)
    nf = len(feature_cols)
    table = np.array(rows, dtype=np.float64).reshape(len(rows), 1 + nf + len(extra_cols))
    ds = ExperimentDataset(
        outcome=table[:, 0],
        treatment=np.array(treat),
        covariates=table[:, 1:1 + nf],
        column_names=tuple(feature_cols),
        extras={c: table[:, 1 + nf + j] for j, c in enumerate(extra_cols)},
    )
    return require_valid(ds)


def write_csv(ds: ExperimentDataset, path, outcome_col: str = "y", treatment_col: str = "t") -> None:
    """Write ``ds`` so that :func:`load_csv` reads back identical values."""
    header = [outcome_col, treatment_col, *ds.column_names, *ds.extras]
    extras = list(ds.extras.values())
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(ds.outcome[i])), str(int(ds.treatment[i]))]
            row += [repr(float(v)) for v in ds.covariates[i]]
            row += [repr(float(e[i])) for e in extras]
            w.writerow(row)


def split_folds(n: int, k: int, stream: RandomStream) -> np.ndarray:
    """Assign ``n`` rows to ``k`` folds uniformly at random.

    A seeded permutation is cut into ``k`` contiguous blocks whose sizes differ
    by at most one (the first ``n % k`` blocks get the extra row).
    Returns an integer vector ``fold[i] in 0..k-1``.
    """
    if k < 2 or k > n:
        raise InvalidArgumentError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = stream.permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for j, block in enumerate(np.array_split(perm, k)):
        folds[block] = j
    return folds


def read_columns(path, columns: Sequence[str]) -> dict[str, np.ndarray]:
    """Read selected numeric columns from a CSV without experiment semantics.

    Used for pre-experiment training data, which has no treatment column.
    Errors follow :func:`load_csv`.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, expected a header row") from None
        for col in columns:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        out: dict[str, list[float]] = {c: [] for c in columns}
        for rownum, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise ParseError(
                    f"{path}: row {rownum} has {len(record)} fields, header has {len(header)}"
                )
            for col in columns:
                raw = record[header.index(col)].strip()
                try:
                    v = float(raw)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {rownum}: missing or non-numeric value {raw!r} "
                        f"in column {col!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {rownum}: non-finite value in column {col!r}")
                out[col].append(v)
    return {c: np.array(v, dtype=np.float64) for c, v in out.items()}
