"""Tabular data ingestion and regression problem assembly."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateDesignError,
    InsufficientDataError,
    ParseError,
    SchemaError,
)

__all__ = [
    "Dataset",
    "LoadReport",
    "ModelSpec",
    "RegressionProblem",
    "load_csv",
    "dataset_from_arrays",
    "build_problem",
    "full_rank",
    "RANK_TOL",
]

RANK_TOL = 1e-10
NA_TOKENS = frozenset({"", "na", "nan", "n/a", "null", "none", "."})
NUMERIC = "numeric"
CATEGORICAL = "categorical"


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Validated named columns of equal length.

    Numeric columns hold float64 values. Categorical columns hold integer
    codes into ``levels[name]``. ``row_ids`` maps every retained row to its
    0-based data row number in the source file (header excluded).
    """

    columns: Mapping[str, np.ndarray]
    levels: Mapping[str, tuple] = field(default_factory=dict)
    row_ids: np.ndarray | None = None
    n_dropped: int = 0

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise SchemaError("columns have differing lengths")
        if not self.columns or lengths.pop() < 1:
            raise InsufficientDataError("dataset has no rows")
        for name, col in self.columns.items():
            if name not in self.levels and not np.all(np.isfinite(col)):
                raise ParseError(f"column {name!r} contains non-finite values", column=name)
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", _frozen(np.arange(self.n_rows)))

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values())))

    def __getitem__(self, name):
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"column {name!r} not found", column=name) from None

    def __contains__(self, name):
        return name in self.columns

    def is_categorical(self, name) -> bool:
        return name in self.levels

    def rows(self) -> list[dict]:
        """Per-row dicts, the data points handed to estimating-function callbacks."""
        names = list(self.columns)
        return [{k: self.columns[k][i] for k in names} for i in range(self.n_rows)]


@dataclass(frozen=True)
class LoadReport:
    n_read: int
    n_rows: int
    n_dropped: int
    dropped_rows: tuple


def dataset_from_arrays(categorical: Sequence[str] = (), **columns) -> Dataset:
    """Build a :class:`Dataset` from in-memory arrays.

    Columns named in ``categorical`` are encoded with levels in sorted order.
    """
    cols, levels = {}, {}
    for name, values in columns.items():
        if name in categorical:
            values = np.asarray(values)
            lv, codes = np.unique(values.astype(str), return_inverse=True)
            cols[name] = _frozen(codes.astype(np.int64))
            levels[name] = tuple(lv.tolist())
        else:
            cols[name] = _frozen(np.asarray(values, dtype=float))
    return Dataset(cols, levels)


def load_csv(
    path,
    schema: Mapping[str, str] | Sequence[str],
    *,
    missing: str = "error",
    strict: bool = True,
    return_report: bool = False,
):
    """Read a header-first UTF-8 CSV file into a :class:`Dataset`.

    Parameters
    ----------
    path : path-like
        CSV file.
    schema : mapping or sequence
        Column name to role (``"numeric"`` or ``"categorical"``). A plain
        sequence declares numeric columns.
    missing : {"error", "drop"}
        Missing-value policy. ``"drop"`` removes offending rows and records
        how many were removed.
    strict : bool
        When true, a numeric cell that cannot be parsed raises
        :class:`ParseError`; otherwise it is treated as missing.
    return_report : bool
        Also return a :class:`LoadReport`.
    """
    if missing not in ("error", "drop"):
        raise ValueError(f"unknown missing-data policy {missing!r}")
    if not isinstance(schema, Mapping):
        schema = {name: NUMERIC for name in schema}
    for role in schema.values():
        if role not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown column role {role!r}")

    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        index = {}
        for name in schema:
            if name not in header:
                raise SchemaError(f"column {name!r} not found in {path}", column=name)
            index[name] = header.index(name)
        raw = list(reader)

    values = {name: [] for name in schema}
    kept, dropped = [], []
    for r, record in enumerate(raw):
        if not record or all(not c.strip() for c in record):
            continue
        row_vals, bad = {}, None
        for name, role in schema.items():
            j = index[name]
            cell = record[j].strip() if j < len(record) else ""
            if cell.lower() in NA_TOKENS:
                bad = bad or name
                continue
            if role == CATEGORICAL:
                row_vals[name] = cell
                continue
            try:
                v = float(cell)
            except ValueError:
                if strict:
                    raise ParseError(
                        f"row {r}, column {name!r}: cannot parse {cell!r} as a number",
                        row=r, column=name,
                    ) from None
                bad = bad or name
                continue
            if not math.isfinite(v):
                bad = bad or name
                continue
            row_vals[name] = v
        if bad is not None:
            if missing == "error":
                raise ParseError(f"row {r}, column {bad!r}: missing or non-finite value",
                                 row=r, column=bad)
            dropped.append(r)
            continue
        kept.append(r)
        for name in schema:
            values[name].append(row_vals[name])

    if not kept:
        raise InsufficientDataError(f"{path}: no usable rows")
    cols, levels = {}, {}
    for name, role in schema.items():
        if role == CATEGORICAL:
            lv, codes = np.unique(np.array(values[name], dtype=str), return_inverse=True)
            cols[name] = _frozen(codes.astype(np.int64))
            levels[name] = tuple(lv.tolist())
        else:
            cols[name] = _frozen(np.array(values[name], dtype=float))
    ds = Dataset(cols, levels, row_ids=_frozen(np.array(kept, dtype=np.int64)),
                 n_dropped=len(dropped))
    if return_report:
        return ds, LoadReport(len(kept) + len(dropped), len(kept), len(dropped), tuple(dropped))
    return ds


@dataclass(frozen=True)
class ModelSpec:
    outcome: str
    regressors: Sequence[str] = ()
    instruments: Sequence[str] | None = None
    intercept: bool = True
    weights: str | None = None
    clusters: str | None = None


@dataclass(frozen=True)
class RegressionProblem:
    """Outcome, design and optional instruments, weights and clusters.

    ``Z`` is ``None`` for OLS. ``clusters`` holds integer codes 0..G-1.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray | None = None
    base_weights: np.ndarray | None = None
    clusters: np.ndarray | None = None
    names: tuple = ()
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        y = _frozen(np.asarray(self.y, dtype=float).reshape(-1))
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", _frozen(X))
        if X.shape[0] != y.shape[0]:
            raise SchemaError("X and y have different numbers of rows")
        if self.Z is not None:
            Z = np.asarray(self.Z, dtype=float)
            if Z.ndim == 1:
                Z = Z[:, None]
            if Z.shape != X.shape:
                raise SchemaError(
                    f"instrument matrix has shape {Z.shape}, expected {X.shape} "
                    "(just-identified IV only)")
            object.__setattr__(self, "Z", _frozen(Z))
        if self.base_weights is not None:
            bw = np.asarray(self.base_weights, dtype=float).reshape(-1)
            if bw.shape != y.shape or not np.all(np.isfinite(bw)) or np.any(bw <= 0):
                raise SchemaError("base weights must be finite, strictly positive, one per row")
            object.__setattr__(self, "base_weights", _frozen(bw))
        if self.clusters is not None:
            cl = np.asarray(self.clusters).reshape(-1)
            if cl.shape != y.shape:
                raise SchemaError("cluster labels must have one entry per row")
            _, codes = np.unique(cl, return_inverse=True)
            object.__setattr__(self, "clusters", _frozen(codes.astype(np.int64)))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{j}" for j in range(X.shape[1])))
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", _frozen(np.arange(len(y))))

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def is_iv(self) -> bool:
        return self.Z is not None

    @property
    def instruments(self) -> np.ndarray:
        """Z for IV problems, X otherwise."""
        return self.X if self.Z is None else self.Z

    @property
    def weights(self) -> np.ndarray:
        """Base weights, all ones when none were given."""
        return np.ones(self.N) if self.base_weights is None else self.base_weights

    def index_of(self, name) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"regressor {name!r} not in model", column=name) from None


def full_rank(A, tol=RANK_TOL) -> bool:
    """Relative singular-value rank test: ``s_min / s_max > tol``."""
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return s.size > 0 and s[0] > 0 and s[-1] / s[0] > tol


def _design_block(data: Dataset, names):
    cols, labels = [], []
    for name in names:
        col = data[name]
        if data.is_categorical(name):
            levels = data.levels[name]
            for code, level in enumerate(levels[1:], start=1):
                cols.append((col == code).astype(float))
                labels.append(f"{name}[{level}]")
        else:
            cols.append(np.asarray(col, dtype=float))
            labels.append(name)
    return cols, labels


def build_problem(data: Dataset, spec: ModelSpec) -> RegressionProblem:
    """Assemble a :class:`RegressionProblem` and verify identifiability.

    Categorical regressors expand to indicators with the first level as
    reference; an all-ones column is prepended when ``spec.intercept``.
    """
    y = np.asarray(data[spec.outcome], dtype=float)
    cols, names = _design_block(data, spec.regressors)
    n = data.n_rows
    if spec.intercept:
        cols.insert(0, np.ones(n))
        names.insert(0, "(Intercept)")
    if not cols:
        raise SchemaError("model has no regressors")
    X = np.column_stack(cols)
    N, P = X.shape
    if N <= P:
        raise InsufficientDataError(f"need more rows than regressors (N={N}, P={P})")
    if not full_rank(X):
        raise DegenerateDesignError("regressor matrix is rank deficient")

    Z = None
    if spec.instruments is not None:
        zcols, _ = _design_block(data, spec.instruments)
        if spec.intercept:
            zcols.insert(0, np.ones(n))
        Z = np.column_stack(zcols)
        if Z.shape[1] != P:
            raise SchemaError(
                f"{Z.shape[1]} instrument columns for {P} regressors; "
                "only just-identified IV is supported")
        if not full_rank(Z.T @ X):
            raise DegenerateDesignError("instrument cross-product Z'X is singular")

    weights = None if spec.weights is None else np.asarray(data[spec.weights], dtype=float)
    clusters = None if spec.clusters is None else np.asarray(data[spec.clusters])
    return RegressionProblem(y, X, Z, weights, clusters, tuple(names), data.row_ids)
