"""Record types shared across the package, and CSV ingestion/serialization."""

from __future__ import annotations

import csv
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt

from .errors import DimensionError, SchemaError, ValidationError

METHODS = ("OE", "CLW", "KW", "VD", "WVL")

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _check_design(X: np.ndarray, name: str) -> None:
    if X.ndim != 2 or X.shape[1] < 1:
        raise DimensionError(f"{name} must be a 2-d array with at least one column")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite values")
    if X.shape[0] and not np.all(X[:, 0] == 1.0):
        raise ValidationError(f"first column of {name} must be the intercept (all ones)")


def _check_unique(ids: np.ndarray, name: str) -> None:
    if np.unique(ids).size != ids.size:
        raise ValidationError(f"{name} contains duplicate unit ids")


def add_intercept(covariates) -> FloatArray:
    """Prepend the constant column to a covariate matrix."""
    Z = np.asarray(covariates, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    return np.column_stack([np.ones(Z.shape[0]), Z])


@dataclass(frozen=True)
class Population:
    """Finite population: design matrix with intercept, outcome, optional true propensities."""

    X: FloatArray
    y: FloatArray
    pi_b_true: Optional[FloatArray] = None

    def __post_init__(self):
        X = _frozen(self.X, np.float64)
        y = _frozen(self.y, np.float64)
        _check_design(X, "population X")
        if X.shape[0] < 1:
            raise ValidationError("population must have at least one unit")
        if y.shape != (X.shape[0],):
            raise DimensionError("y length must equal number of rows of X")
        if not np.all(np.isfinite(y)):
            raise ValidationError("population y contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.pi_b_true is not None:
            pi = _frozen(self.pi_b_true, np.float64)
            if pi.shape != y.shape:
                raise DimensionError("pi_b_true length must equal N")
            if not np.all((pi > 0) & (pi < 1)):
                raise ValidationError("true propensities must lie strictly in (0, 1)")
            object.__setattr__(self, "pi_b_true", pi)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def mean_y(self) -> float:
        return float(np.mean(self.y))


@dataclass(frozen=True)
class ReferenceSample:
    """Probability sample A: unit ids, design weights, overlap flags, covariate rows."""

    ids: IntArray
    d: FloatArray
    delta: BoolArray
    X: FloatArray
    overlap_known: bool = True

    def __post_init__(self):
        ids = _frozen(self.ids, np.int64)
        d = _frozen(self.d, np.float64)
        delta = _frozen(self.delta, np.bool_)
        X = _frozen(self.X, np.float64)
        n = ids.shape[0]
        if n < 1:
            raise ValidationError("reference sample must contain at least one unit")
        if d.shape != (n,) or delta.shape != (n,) or X.shape[0] != n:
            raise DimensionError("reference sample arrays have inconsistent lengths")
        _check_design(X, "reference X")
        if not np.all(np.isfinite(d)):
            raise ValidationError("design weights must be finite")
        if np.any(d < 1.0):
            raise ValidationError("design weights must be >= 1")
        _check_unique(ids, "reference sample")
        for k, v in (("ids", ids), ("d", d), ("delta", delta), ("X", X)):
            object.__setattr__(self, k, v)

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class BigSample:
    """Non-probability sample B.

    ``dA`` optionally holds the reference-design weight each unit of B would
    carry; it is only needed for the standard third variance term.
    """

    ids: IntArray
    X: FloatArray
    y: FloatArray
    dA: Optional[FloatArray] = None

    def __post_init__(self):
        ids = _frozen(self.ids, np.int64)
        X = _frozen(self.X, np.float64)
        y = _frozen(self.y, np.float64)
        n = ids.shape[0]
        if n < 1:
            raise ValidationError("big sample must contain at least one unit")
        if y.shape != (n,) or X.shape[0] != n:
            raise DimensionError("big sample arrays have inconsistent lengths")
        _check_design(X, "big-sample X")
        if not np.all(np.isfinite(y)):
            raise ValidationError("big-sample y contains non-finite values")
        _check_unique(ids, "big sample")
        for k, v in (("ids", ids), ("X", X), ("y", y)):
            object.__setattr__(self, k, v)
        if self.dA is not None:
            dA = _frozen(self.dA, np.float64)
            if dA.shape != (n,):
                raise DimensionError("dA length must equal N_B")
            if not np.all(np.isfinite(dA)) or np.any(dA < 1.0):
                raise ValidationError("design weights on B must be finite and >= 1")
            object.__setattr__(self, "dA", dA)

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class PropensityFit:
    method: str
    theta_hat: FloatArray
    iterations: int
    converged: bool
    score_norm: float
    pi_hat_B: FloatArray
    pi_hat_A: FloatArray
    n_pi_above_one: int = 0
    loglik_trace: tuple = field(default=(), repr=False)
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        for k in ("theta_hat", "pi_hat_B", "pi_hat_A"):
            object.__setattr__(self, k, _frozen(getattr(self, k), np.float64))
        if self.converged and not self.score_norm <= self.tolerance:
            raise ValidationError("a converged fit must have score norm within tolerance")

    @property
    def weights_B(self) -> FloatArray:
        return 1.0 / self.pi_hat_B


@dataclass(frozen=True)
class MeanEstimate:
    mu_hat: float
    N_B_hat: float
    variance: Optional[float] = None
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None
    variance_variant: Optional[str] = None

    def __post_init__(self):
        if self.variance is not None and self.variance < 0:
            raise ValidationError("variance must be nonnegative")
        if self.ci_lower is not None and not (self.ci_lower <= self.mu_hat <= self.ci_upper):
            raise ValidationError("confidence interval must contain the point estimate")


def tag_overlap(ids_A, ids_B) -> BoolArray:
    """Flag reference-sample ids that also occur in the big sample."""
    return np.isin(np.asarray(ids_A, dtype=np.int64), np.asarray(ids_B, dtype=np.int64))


def with_overlap(A: ReferenceSample, B: BigSample) -> ReferenceSample:
    return dataclasses.replace(A, delta=tag_overlap(A.ids, B.ids), overlap_known=True)


# --- CSV ingestion -------------------------------------------------------------

REFERENCE_SCHEMA = {"id": "id", "weight": "design_weight", "overlap": "in_big"}
BIG_SCHEMA = {"id": "id", "y": "y", "weight": "design_weight"}

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


def _read_rows(path) -> tuple[list[str], list[dict]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"{path} is empty")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path} has no data rows")
    return header, rows


def _covariate_columns(header, schema, reserved) -> list[str]:
    covs = schema.get("covariates")
    if covs is None:
        covs = [h for h in header if h not in reserved]
    missing = [c for c in covs if c not in header]
    if missing:
        raise SchemaError(f"missing covariate columns: {missing}")
    return list(covs)


def _floats(rows, col, path) -> np.ndarray:
    try:
        vals = np.array([float(r[col]) for r in rows])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: non-numeric value in column {col!r}") from exc
    if not np.all(np.isfinite(vals)):
        raise ValidationError(f"{path}: non-finite value in column {col!r}")
    return vals


def _ints(rows, col, path) -> np.ndarray:
    try:
        return np.array([int(r[col]) for r in rows], dtype=np.int64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: ids must be integers") from exc


def _flags(rows, col, path) -> np.ndarray:
    out = []
    for r in rows:
        v = (r[col] or "").strip().lower()
        if v in _TRUE:
            out.append(True)
        elif v in _FALSE:
            out.append(False)
        else:
            raise ValidationError(f"{path}: bad overlap flag {r[col]!r}")
    return np.array(out, dtype=bool)


def _design_from(rows, covs, path) -> FloatArray:
    Z = np.column_stack([_floats(rows, c, path) for c in covs]) if covs else np.empty((len(rows), 0))
    return add_intercept(Z)


def load_reference_sample(
    path, schema: Optional[Mapping] = None, n_covariates: Optional[int] = None
) -> ReferenceSample:
    """Read a reference-sample CSV (``id,x1,...,design_weight[,in_big]``).

    ``schema`` maps the roles ``id``, ``weight``, ``overlap`` and optionally
    ``covariates`` (a list) to column names. Without an overlap column the
    flags are all false and ``overlap_known`` is false.
    """
    schema = {**REFERENCE_SCHEMA, **(schema or {})}
    header, rows = _read_rows(path)
    for role in ("id", "weight"):
        if schema[role] not in header:
            raise SchemaError(f"{path}: missing {role} column {schema[role]!r}")
    reserved = {schema["id"], schema["weight"], schema["overlap"]}
    covs = _covariate_columns(header, schema, reserved)
    if n_covariates is not None and len(covs) != n_covariates:
        raise DimensionError(f"{path}: expected {n_covariates} covariates, found {len(covs)}")
    has_overlap = schema["overlap"] in header
    delta = _flags(rows, schema["overlap"], path) if has_overlap else np.zeros(len(rows), bool)
    return ReferenceSample(
        ids=_ints(rows, schema["id"], path),
        d=_floats(rows, schema["weight"], path),
        delta=delta,
        X=_design_from(rows, covs, path),
        overlap_known=has_overlap,
    )


def load_big_sample(
    path, schema: Optional[Mapping] = None, n_covariates: Optional[int] = None
) -> BigSample:
    """Read a big-sample CSV (``id,x1,...,y[,design_weight]``)."""
    schema = {**BIG_SCHEMA, **(schema or {})}
    header, rows = _read_rows(path)
    for role in ("id", "y"):
        if schema[role] not in header:
            raise SchemaError(f"{path}: missing {role} column {schema[role]!r}")
    reserved = {schema["id"], schema["y"], schema["weight"]}
    covs = _covariate_columns(header, schema, reserved)
    if n_covariates is not None and len(covs) != n_covariates:
        raise DimensionError(f"{path}: expected {n_covariates} covariates, found {len(covs)}")
    dA = _floats(rows, schema["weight"], path) if schema["weight"] in header else None
    return BigSample(
        ids=_ints(rows, schema["id"], path),
        X=_design_from(rows, covs, path),
        y=_floats(rows, schema["y"], path),
        dA=dA,
    )


def _names(p: int, names: Optional[Sequence[str]]) -> list[str]:
    if names is None:
        return [f"x{j}" for j in range(1, p)]
    if len(names) != p - 1:
        raise DimensionError("need one name per non-intercept column")
    return list(names)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_reference_sample(path, A: ReferenceSample, covariate_names=None) -> None:
    names = _names(A.p, covariate_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *names, "design_weight"] + (["in_big"] if A.overlap_known else []))
        for i in range(A.n):
            row = [int(A.ids[i]), *map(_fmt, A.X[i, 1:]), _fmt(A.d[i])]
            if A.overlap_known:
                row.append(int(A.delta[i]))
            w.writerow(row)


def write_big_sample(path, B: BigSample, covariate_names=None) -> None:
    names = _names(B.p, covariate_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *names, "y"] + (["design_weight"] if B.dA is not None else []))
        for i in range(B.n):
            row = [int(B.ids[i]), *map(_fmt, B.X[i, 1:]), _fmt(B.y[i])]
            if B.dA is not None:
                row.append(_fmt(B.dA[i]))
            w.writerow(row)


def write_population(path, pop: Population, covariate_names=None) -> None:
    """Write ``id,x1,...,y,pi_b_true`` (the last column empty when unknown)."""
    names = _names(pop.p, covariate_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *names, "y", "pi_b_true"])
        for i in range(pop.N):
            pi = "" if pop.pi_b_true is None else _fmt(pop.pi_b_true[i])
            w.writerow([i, *map(_fmt, pop.X[i, 1:]), _fmt(pop.y[i]), pi])


def load_population(path) -> Population:
    header, rows = _read_rows(path)
    for col in ("id", "y"):
        if col not in header:
            raise SchemaError(f"{path}: missing {col!r} column")
    covs = [h for h in header if re.fullmatch(r"x\d+", h)]
    has_pi = "pi_b_true" in header and all(r["pi_b_true"] for r in rows)
    ids = _ints(rows, "id", path)
    if not np.array_equal(ids, np.arange(len(rows))):
        raise ValidationError(f"{path}: population ids must be 0..N-1 in order")
    return Population(
        X=_design_from(rows, covs, path),
        y=_floats(rows, "y", path),
        pi_b_true=_floats(rows, "pi_b_true", path) if has_pi else None,
    )
