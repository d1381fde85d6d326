"""Measurement operators (entrywise sampling and dense Gaussian maps), random
instance generation, and problem-file (de)serialization.

Vectorization convention: a dense sensing matrix row acts on ``X_vec``, the
column-stacked (Fortran-order) vector of X. Completion index pairs are stored
0-based in memory and 1-based in problem files.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalFailure, ParameterError, SchemaError

__all__ = [
    "MeasurementOperator",
    "ProblemInstance",
    "degrees_of_freedom",
    "sample_completion_operator",
    "sample_ground_truth",
    "sample_gaussian_operator",
    "null_space_basis",
    "save_instance",
    "load_instance",
]

NULL_SPACE_CAP = 4096  # largest d1*d2 for which a dense kernel basis is formed


@dataclass(frozen=True)
class MeasurementOperator:
    """A linear map Phi from d1 x d2 matrices to R^m.

    kind "completion": rows/cols hold m pairwise-distinct 0-based index pairs
    and Phi(X)_l = X[rows[l], cols[l]].  kind "dense": sensing is an
    m x (d1*d2) matrix acting on X_vec (rows are assumed independent; this is
    only verified implicitly when a Gram system is factorized).
    """

    kind: str
    d1: int
    d2: int
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    sensing: np.ndarray | None = None

    def __post_init__(self):
        if self.d1 < 1 or self.d2 < 1:
            raise ParameterError("dimensions must be positive")
        if self.kind == "completion":
            rows = np.asarray(self.rows, dtype=np.intp)
            cols = np.asarray(self.cols, dtype=np.intp)
            object.__setattr__(self, "rows", rows)
            object.__setattr__(self, "cols", cols)
            if rows.ndim != 1 or rows.shape != cols.shape:
                raise ParameterError("rows and cols must be 1-d of equal length")
            if rows.size < 1 or rows.size > self.d1 * self.d2:
                raise ParameterError(f"m must lie in [1, {self.d1 * self.d2}]")
            if rows.min() < 0 or rows.max() >= self.d1:
                raise ParameterError("row index out of range")
            if cols.min() < 0 or cols.max() >= self.d2:
                raise ParameterError("column index out of range")
            flat = rows * self.d2 + cols
            if np.unique(flat).size != flat.size:
                raise ParameterError("sampled index pairs must be pairwise distinct")
        elif self.kind == "dense":
            S = np.asarray(self.sensing, dtype=np.float64)
            object.__setattr__(self, "sensing", S)
            if S.ndim != 2 or S.shape[1] != self.d1 * self.d2:
                raise ParameterError(
                    f"sensing must be m x {self.d1 * self.d2}, got {S.shape}"
                )
            if not np.all(np.isfinite(S)):
                raise ParameterError("sensing entries must be finite")
        else:
            raise ParameterError(f"unknown operator kind {self.kind!r}")

    @property
    def m(self) -> int:
        if self.kind == "completion":
            return int(self.rows.size)
        return int(self.sensing.shape[0])

    def apply(self, X) -> np.ndarray:
        """Phi(X), a length-m vector."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape != (self.d1, self.d2):
            raise ParameterError(f"expected shape {(self.d1, self.d2)}, got {X.shape}")
        if self.kind == "completion":
            return X[self.rows, self.cols]
        return self.sensing @ X.ravel(order="F")

    def adjoint_apply(self, y) -> np.ndarray:
        """Phi*(y), the unique matrix with <Phi(X), y> = <X, Phi*(y)>_F."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.m,):
            raise ParameterError(f"expected length {self.m}, got shape {y.shape}")
        if self.kind == "completion":
            out = np.zeros((self.d1, self.d2))
            out[self.rows, self.cols] = y  # indices distinct, plain scatter
            return out
        return (self.sensing.T @ y).reshape((self.d1, self.d2), order="F")


@dataclass(frozen=True)
class ProblemInstance:
    """A recovery problem: dimensions, operator, data y, optional rank/truth/seed."""

    d1: int
    d2: int
    rank: int | None
    operator: MeasurementOperator
    y: np.ndarray
    ground_truth: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "y", y)
        if (self.operator.d1, self.operator.d2) != (self.d1, self.d2):
            raise ParameterError("operator dimensions disagree with instance")
        if y.shape != (self.operator.m,):
            raise ParameterError("y length disagrees with operator")
        if not np.all(np.isfinite(y)):
            raise ParameterError("y entries must be finite")
        if self.rank is not None and not 1 <= self.rank <= min(self.d1, self.d2):
            raise ParameterError(f"rank {self.rank} out of range")
        if self.ground_truth is not None:
            G = np.asarray(self.ground_truth, dtype=np.float64)
            object.__setattr__(self, "ground_truth", G)
            if G.shape != (self.d1, self.d2):
                raise ParameterError("ground truth has wrong shape")
            resid = np.linalg.norm(self.operator.apply(G) - y)
            if resid > 1e-12 * max(1.0, np.linalg.norm(y)):
                raise ParameterError(
                    f"ground truth is inconsistent with y (residual {resid:.3e})"
                )


def degrees_of_freedom(d1: int, d2: int, r: int) -> int:
    """Parameter count r*(d1+d2-r) of the rank-r manifold in d1 x d2 matrices."""
    return r * (d1 + d2 - r)


def sample_completion_operator(d1, d2, r, m, rng, max_attempts: int = 10000):
    """Draw m distinct cells uniformly, redrawing wholesale until every row and
    every column holds at least r cells.

    Wholesale redraw (rather than repairing a bad mask) keeps the conditional
    distribution uniform over feasible masks.
    """
    if r < 0:
        raise ParameterError("r must be non-negative")
    if m > d1 * d2:
        raise ParameterError(f"m = {m} exceeds the {d1 * d2} available cells")
    if m < r * max(d1, d2):
        raise ParameterError(
            f"m = {m} cannot give {r} entries per row and column "
            f"(needs at least {r * max(d1, d2)})"
        )
    if m < 1:
        raise ParameterError("m must be positive")
    for _ in range(max_attempts):
        flat = rng.choice(d1 * d2, size=m, replace=False)
        rows = flat // d2
        cols = flat % d2
        if r == 0 or (
            np.bincount(rows, minlength=d1).min() >= r
            and np.bincount(cols, minlength=d2).min() >= r
        ):
            return MeasurementOperator("completion", d1, d2, rows=rows, cols=cols)
    raise NumericalFailure(
        f"no mask with >= {r} entries per row/column in {max_attempts} attempts"
    )


def sample_ground_truth(d1, d2, r, rng) -> np.ndarray:
    """Rank-r matrix U diag(s) V^T with iid standard normal U (d1 x r), V (d2 x r)
    and diagonal s (drawn in that order)."""
    if not 1 <= r <= min(d1, d2):
        raise ParameterError(f"r must lie in [1, {min(d1, d2)}], got {r}")
    U = rng.standard_normal((d1, r))
    V = rng.standard_normal((d2, r))
    s = rng.standard_normal(r)
    X0 = (U * s) @ V.T
    sv = np.linalg.svd(X0, compute_uv=False)
    if not sv[r - 1] > 1e-10 * sv[0]:
        raise NumericalFailure("sampled matrix is numerically rank deficient")
    return X0


def sample_gaussian_operator(d1, d2, m, rng) -> MeasurementOperator:
    """Dense operator with iid N(0, 1/m) entries."""
    if not 1 <= m <= d1 * d2:
        raise ParameterError(f"m must lie in [1, {d1 * d2}], got {m}")
    S = rng.standard_normal((m, d1 * d2)) / math.sqrt(m)
    return MeasurementOperator("dense", d1, d2, sensing=S)


def null_space_basis(op: MeasurementOperator, cap: int = NULL_SPACE_CAP):
    """Orthonormal basis of ker(Phi) as a list of d1 x d2 matrices.

    Completion: the unit matrices at unsampled cells, in row-major cell order.
    Dense: an SVD-based kernel basis; refused above the size cap.
    """
    if op.kind == "completion":
        mask = np.ones((op.d1, op.d2), dtype=bool)
        mask[op.rows, op.cols] = False
        out = []
        for i, j in np.argwhere(mask):
            B = np.zeros((op.d1, op.d2))
            B[i, j] = 1.0
            out.append(B)
        return out
    if op.d1 * op.d2 > cap:
        raise ParameterError(
            f"dense kernel basis needs d1*d2 <= {cap}, got {op.d1 * op.d2}"
        )
    K = scipy.linalg.null_space(op.sensing)
    return [K[:, k].reshape((op.d1, op.d2), order="F") for k in range(K.shape[1])]


# ---------------------------------------------------------------------------
# Problem files: strict JSON schema, floats printed with 17 significant digits
# so that every 64-bit value round-trips exactly and output bytes are stable.


def _fmt_float(x) -> str:
    return format(float(x), ".17g")


def _fmt_float_list(v) -> str:
    return "[" + ", ".join(_fmt_float(x) for x in v) + "]"


def _fmt_int_list(v) -> str:
    return "[" + ", ".join(str(int(x)) for x in v) + "]"


def _fmt_matrix(M) -> str:
    return "[" + ", ".join(_fmt_float_list(row) for row in M) + "]"


def save_instance(inst: ProblemInstance, path) -> None:
    """Write a problem file (see README for the schema). Deterministic bytes."""
    op = inst.operator
    if op.kind == "completion":
        op_text = (
            '{"kind": "completion", "rows": '
            + _fmt_int_list(op.rows + 1)
            + ', "cols": '
            + _fmt_int_list(op.cols + 1)
            + "}"
        )
    else:
        op_text = '{"kind": "dense", "sensing": ' + _fmt_matrix(op.sensing) + "}"
    lines = [
        "{",
        f'"d1": {inst.d1},',
        f'"d2": {inst.d2},',
        f'"rank": {"null" if inst.rank is None else inst.rank},',
        f'"seed": {"null" if inst.seed is None else inst.seed},',
        f'"operator": {op_text},',
        f'"y": {_fmt_float_list(inst.y)},',
        '"ground_truth": '
        + ("null" if inst.ground_truth is None else _fmt_matrix(inst.ground_truth)),
        "}",
    ]
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _require(cond, field, msg):
    if not cond:
        raise SchemaError(f"problem file field {field!r}: {msg}")


def load_instance(path) -> ProblemInstance:
    """Read a problem file, rejecting unknown or ill-typed fields."""
    if not os.path.exists(path):
        raise SchemaError(f"no such problem file: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"problem file is not valid JSON: {exc}") from exc
    _require(isinstance(doc, dict), "<root>", "must be an object")
    allowed = {"d1", "d2", "rank", "seed", "operator", "y", "ground_truth"}
    unknown = set(doc) - allowed
    _require(not unknown, sorted(unknown)[0] if unknown else "", "unknown field")
    for field in ("d1", "d2", "operator", "y"):
        _require(field in doc, field, "missing")
    d1, d2 = doc["d1"], doc["d2"]
    _require(isinstance(d1, int) and d1 >= 1, "d1", "must be a positive integer")
    _require(isinstance(d2, int) and d2 >= 1, "d2", "must be a positive integer")
    rank = doc.get("rank")
    _require(rank is None or isinstance(rank, int), "rank", "must be integer or null")
    seed = doc.get("seed")
    _require(seed is None or isinstance(seed, int), "seed", "must be integer or null")

    opdoc = doc["operator"]
    _require(isinstance(opdoc, dict), "operator", "must be an object")
    kind = opdoc.get("kind")
    if kind == "completion":
        _require(set(opdoc) == {"kind", "rows", "cols"}, "operator",
                 'completion needs exactly {"kind", "rows", "cols"}')
        rows, cols = opdoc["rows"], opdoc["cols"]
        for name, v in (("rows", rows), ("cols", cols)):
            _require(isinstance(v, list) and all(isinstance(x, int) for x in v),
                     f"operator.{name}", "must be a list of integers")
        _require(len(rows) == len(cols), "operator.rows", "rows/cols length mismatch")
        _require(all(1 <= x <= d1 for x in rows), "operator.rows", "index out of range")
        _require(all(1 <= x <= d2 for x in cols), "operator.cols", "index out of range")
        op = MeasurementOperator(
            "completion", d1, d2,
            rows=np.asarray(rows, dtype=np.intp) - 1,
            cols=np.asarray(cols, dtype=np.intp) - 1,
        )
    elif kind == "dense":
        _require(set(opdoc) == {"kind", "sensing"}, "operator",
                 'dense needs exactly {"kind", "sensing"}')
        S = opdoc["sensing"]
        _require(isinstance(S, list) and S and all(isinstance(r_, list) for r_ in S),
                 "operator.sensing", "must be a non-empty list of rows")
        _require(all(len(r_) == d1 * d2 for r_ in S),
                 "operator.sensing", f"rows must have length {d1 * d2}")
        op = MeasurementOperator("dense", d1, d2, sensing=np.asarray(S, dtype=np.float64))
    else:
        raise SchemaError(f"problem file field 'operator.kind': unknown kind {kind!r}")

    y = doc["y"]
    _require(isinstance(y, list) and all(isinstance(x, (int, float)) for x in y),
             "y", "must be a list of numbers")
    _require(len(y) == op.m, "y", f"length {len(y)} != m = {op.m}")
    gt = doc.get("ground_truth")
    if gt is not None:
        _require(isinstance(gt, list) and len(gt) == d1
                 and all(isinstance(r_, list) and len(r_) == d2 for r_ in gt),
                 "ground_truth", f"must be a {d1} x {d2} array of numbers")
        gt = np.asarray(gt, dtype=np.float64)
    try:
        return ProblemInstance(
            d1=d1, d2=d2, rank=rank, operator=op,
            y=np.asarray(y, dtype=np.float64), ground_truth=gt, seed=seed,
        )
    except ParameterError as exc:
        raise SchemaError(f"problem file is inconsistent: {exc}") from exc
