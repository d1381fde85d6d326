"""Iteratively reweighted least squares for low-rank recovery.

One loop drives four reweighting rules that differ only in the Hadamard
coefficient law attached to the iterate's singular vectors:

* ``hm``  - harmonic mean of the two one-sided spectral coefficients,
* ``am``  - arithmetic mean of the same,
* ``col`` - column-space (left-sided) coefficients only,
* ``row`` - row-space (right-sided) coefficients only.

Each iteration solves the weighted least-squares problem
``min <X_vec, W X_vec> s.t. Phi(X) = y`` through its m x m Gram system,
shrinks the smoothing parameter via ``eps = min(eps, sigma_{r+1}(X))``, and
rebuilds the weights from the new iterate.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import NumericalFailure, ParameterError, SingularityError
from .linalg import SvdFactors, svd
from .measurements import MeasurementOperator, ProblemInstance

__all__ = [
    "Variant",
    "SolverConfig",
    "WeightState",
    "SolveTrace",
    "identity_weight_state",
    "build_weight_state",
    "weight_inverse_apply",
    "assemble_gram",
    "assemble_gram_dense",
    "weighted_ls_step",
    "epsilon_update",
    "solve",
]

DENSE_CHOLESKY_LIMIT = 2000  # largest m factored densely by default


class Variant(Enum):
    HM = "hm"
    AM = "am"
    COL = "col"
    ROW = "row"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ParameterError(
                f"unknown variant {name!r}; expected one of hm, am, col, row"
            ) from None


@dataclass(frozen=True)
class SolverConfig:
    p: float
    rank_estimate: int
    variant: Variant = Variant.HM
    tol_rel_change: float = 1e-10
    max_iters: int = 3000
    success_tol: float = 1e-3
    epsilon_floor: float = 0.0
    gram_backend: str = "dense_cholesky"
    cg_tol: float = 1e-12
    cg_max_iters: int | None = None

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ParameterError(f"p must lie in (0, 1], got {self.p}")
        if not (isinstance(self.rank_estimate, (int, np.integer)) and self.rank_estimate >= 1):
            raise ParameterError("rank_estimate must be a positive integer")
        if not self.tol_rel_change > 0:
            raise ParameterError("tol_rel_change must be positive")
        if not self.max_iters >= 1:
            raise ParameterError("max_iters must be at least 1")
        if not self.success_tol > 0:
            raise ParameterError("success_tol must be positive")
        if self.epsilon_floor < 0:
            raise ParameterError("epsilon_floor must be non-negative")
        if self.gram_backend not in ("dense_cholesky", "conjugate_gradient"):
            raise ParameterError(f"unknown gram_backend {self.gram_backend!r}")
        if not self.cg_tol > 0:
            raise ParameterError("cg_tol must be positive")
        if isinstance(self.variant, str):
            object.__setattr__(self, "variant", Variant.parse(self.variant))


@dataclass(frozen=True)
class WeightState:
    """Spectral data realizing one weight operator W.

    ``smoothed`` has length max(d1, d2): entries (sigma_i^2 + eps^2)^(1/2) for
    i <= min(d1, d2) and exactly 0.0 in the padded range beyond; both one-sided
    profiles are read off this single list by truncation. H holds the d1 x d2
    coefficient matrix, so <X_vec, W X_vec> = sum_ij H_ij <u_i, X v_j>^2.
    """

    U: np.ndarray
    V: np.ndarray
    smoothed: np.ndarray
    epsilon: float
    p: float
    variant: Variant
    H: np.ndarray

    @property
    def shape(self):
        return self.U.shape[0], self.V.shape[0]


@dataclass
class SolveTrace:
    """Per-iteration history of a solve (index n runs from 1).

    rel_error is None when the instance carries no ground truth. feasibility
    and stationarity are recorded so invariant checks need not re-run the
    solve; stationarity entries may be None when no null-space basis is
    available (dense operators above the size cap).
    """

    status: str = "max_iters"
    message: str | None = None
    rel_change: list = field(default_factory=list)
    rel_error: list | None = None
    epsilon: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    g_eps_p: list = field(default_factory=list)
    feasibility: list = field(default_factory=list)
    stationarity: list = field(default_factory=list)
    # dynamic range max(H)/min(H) of the pre-step coefficients; floating
    # point cannot resolve the stationarity residual below roughly
    # machine_eps times this ratio
    weight_condition: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.rel_change)

    @property
    def final_rel_error(self):
        if self.rel_error:
            return self.rel_error[-1]
        return None


def _one_sided_profiles(smoothed, d1, d2, epsilon, p, variant):
    """Per-index coefficient ingredients on each side.

    For hm the profile is sigma_bar^(2-p) with padded entries contributing 0;
    for the other variants it is sigma_bar^(p-2) with padded entries pinned to
    eps^(p-2) to keep the operator finite (only possible when eps > 0).
    """
    out = []
    for dim in (d1, d2):
        sb = smoothed[:dim]
        pos = sb > 0.0
        prof = np.zeros(dim)
        if variant is Variant.HM:
            prof[pos] = sb[pos] ** (2.0 - p)
        else:
            prof[pos] = sb[pos] ** (p - 2.0)
            if not pos.all():
                if epsilon <= 0.0:
                    raise SingularityError(
                        "weights are singular: zero smoothing together with a "
                        "rank-deficient or padded spectrum"
                    )
                prof[~pos] = epsilon ** (p - 2.0)
        out.append(prof)
    return out


def _coefficients(smoothed, d1, d2, epsilon, p, variant):
    a, b = _one_sided_profiles(smoothed, d1, d2, epsilon, p, variant)
    if variant is Variant.HM:
        den = a[:, None] + b[None, :]
        if np.any(den <= 0.0):
            raise SingularityError(
                "harmonic-mean weights are singular: a smoothed singular value "
                "vanished on both sides"
            )
        return 2.0 / den
    if variant is Variant.COL:
        return np.repeat(a[:, None], d2, axis=1)
    if variant is Variant.ROW:
        return np.repeat(b[None, :], d1, axis=0)
    return 0.5 * (a[:, None] + b[None, :])


def _state_from_factors(sv: SvdFactors, epsilon, p, variant) -> WeightState:
    d1, d2 = sv.shape
    d = min(d1, d2)
    smoothed = np.zeros(max(d1, d2))
    smoothed[:d] = np.sqrt(sv.sigma**2 + epsilon**2)
    H = _coefficients(smoothed, d1, d2, epsilon, p, variant)
    return WeightState(
        U=sv.U, V=sv.V, smoothed=smoothed, epsilon=float(epsilon), p=float(p),
        variant=variant, H=H,
    )


def identity_weight_state(d1, d2, p, variant) -> WeightState:
    """The loop's starting weights: W = identity (H = 1 in the standard basis)."""
    variant = Variant.parse(variant)
    return WeightState(
        U=np.eye(d1), V=np.eye(d2), smoothed=np.ones(max(d1, d2)),
        epsilon=1.0, p=float(p), variant=variant, H=np.ones((d1, d2)),
    )


def build_weight_state(X, epsilon, p, variant) -> WeightState:
    """Weights of the given iterate: SVD factors plus the coefficient matrix H.

    epsilon = 0 demands a full-rank X (square) resp. a variant whose padded
    coefficients stay finite; otherwise the weight operator does not exist and
    a SingularityError is raised.
    """
    if epsilon < 0:
        raise ParameterError("epsilon must be non-negative")
    if not 0.0 < p <= 1.0:
        raise ParameterError(f"p must lie in (0, 1], got {p}")
    variant = Variant.parse(variant)
    return _state_from_factors(svd(X), epsilon, p, variant)


def weight_inverse_apply(w: WeightState, Xt) -> np.ndarray:
    """W^(-1)(Xt) = U (Hbar o (U^T Xt V)) V^T with Hbar = 1/H.

    W is diagonal in the (V (x) U) basis, so inverting it just inverts the
    coefficients.
    """
    Xt = np.asarray(Xt, dtype=np.float64)
    if Xt.shape != w.shape:
        raise ParameterError(f"expected shape {w.shape}, got {Xt.shape}")
    return w.U @ ((1.0 / w.H) * (w.U.T @ Xt @ w.V)) @ w.V.T


# ---------------------------------------------------------------------------
# Gram systems G_kl = <Phi* e_k, W^(-1) Phi* e_l>_F


class _CompletionGram:
    """Gram assembly for entrywise sampling with index grouping precomputed.

    For hm/col/row the inverse coefficients split per side, so G_kl vanishes
    unless the two sampled cells share a row or a column; only the clique
    blocks inside each shared row/column are computed. For am the inverse
    coefficients do not split and G is dense; it is formed as Q Q^T with
    Q = P diag(sqrt(Hbar_vec)) where P_l = outer(U[i_l], V[j_l]) row-flattened.
    """

    def __init__(self, op: MeasurementOperator):
        self.op = op
        ix, jx = op.rows, op.cols
        self.ix, self.jx = ix, jx
        self.col_pairs = self._clique_pairs(jx, op.d2)
        self.row_pairs = self._clique_pairs(ix, op.d1)

    @staticmethod
    def _clique_pairs(labels, nlabels):
        """All ordered pairs (k, l) of sample positions sharing a label."""
        order = np.argsort(labels, kind="stable")
        counts = np.bincount(labels, minlength=nlabels)
        ks, ls = [], []
        start = 0
        for c in counts:
            if c > 1:
                grp = order[start:start + c]
                ks.append(np.repeat(grp, c))
                ls.append(np.tile(grp, c))
            elif c == 1:
                grp = order[start:start + 1]
                ks.append(grp)
                ls.append(grp)
            start += c
        if not ks:
            return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        return np.concatenate(ks), np.concatenate(ls)

    def _sided_matrices(self, w: WeightState):
        """A = U diag(abar) U^T and B = V diag(bbar) V^T with the inverse
        one-sided profiles abar, bbar (sigma_bar^(2-p); padded entries are 0
        for hm and eps^(2-p) for col/row)."""
        d1, d2 = self.op.d1, self.op.d2
        out = []
        for dim, Q in ((d1, w.U), (d2, w.V)):
            sb = w.smoothed[:dim]
            pos = sb > 0.0
            prof = np.zeros(dim)
            prof[pos] = sb[pos] ** (2.0 - w.p)
            if w.variant is not Variant.HM and not pos.all():
                prof[~pos] = w.epsilon ** (2.0 - w.p)
            out.append((Q * prof) @ Q.T)
        return out

    def dense(self, w: WeightState) -> np.ndarray:
        m = self.op.m
        ix, jx = self.ix, self.jx
        if w.variant in (Variant.HM, Variant.COL, Variant.ROW):
            A, B = self._sided_matrices(w)
            G = np.zeros((m, m))
            ck, cl = self.col_pairs
            rk, rl = self.row_pairs
            if w.variant is Variant.HM:
                G[ck, cl] = 0.5 * A[ix[ck], ix[cl]]
                G[rk, rl] += 0.5 * B[jx[rk], jx[rl]]
            elif w.variant is Variant.COL:
                G[ck, cl] = A[ix[ck], ix[cl]]
            else:
                G[rk, rl] = B[jx[rk], jx[rl]]
            return G
        Q = (w.U[ix, :, None] * w.V[jx, None, :]).reshape(m, -1)
        Q *= np.sqrt(1.0 / w.H).reshape(1, -1)
        return Q @ Q.T

    def sparse(self, w: WeightState):
        m = self.op.m
        ix, jx = self.ix, self.jx
        if w.variant is Variant.AM:
            return scipy.sparse.csr_matrix(self.dense(w))
        A, B = self._sided_matrices(w)
        ck, cl = self.col_pairs
        rk, rl = self.row_pairs
        if w.variant is Variant.HM:
            data = np.concatenate([0.5 * A[ix[ck], ix[cl]], 0.5 * B[jx[rk], jx[rl]]])
            kk = np.concatenate([ck, rk])
            ll = np.concatenate([cl, rl])
        elif w.variant is Variant.COL:
            data, kk, ll = A[ix[ck], ix[cl]], ck, cl
        else:
            data, kk, ll = B[jx[rk], jx[rl]], rk, rl
        return scipy.sparse.coo_matrix((data, (kk, ll)), shape=(m, m)).tocsr()


def _dense_op_tensors(op: MeasurementOperator):
    """Adjoint rows of a dense operator as a stack of d1 x d2 matrices."""
    return op.sensing.reshape(op.m, op.d2, op.d1).swapaxes(1, 2)


def _dense_op_gram(op: MeasurementOperator, w: WeightState) -> np.ndarray:
    R = _dense_op_tensors(op)
    T = np.tensordot(R, w.V, axes=([2], [0]))       # (m, d1, d2) right-rotated
    T = np.tensordot(T, w.U, axes=([1], [0]))       # (m, d2, d1) both-rotated
    T = T.swapaxes(1, 2) * (1.0 / w.H)[None, :, :]
    T = np.tensordot(T, w.V.T, axes=([2], [0]))
    T = np.tensordot(T, w.U.T, axes=([1], [0])).swapaxes(1, 2)
    M = T.transpose(0, 2, 1).reshape(op.m, -1)      # rows are vec_F(W^(-1) Phi* e_l)
    G = op.sensing @ M.T
    return 0.5 * (G + G.T)


def assemble_gram(op: MeasurementOperator, w: WeightState):
    """The m x m system G of the weighted least-squares step.

    Completion with hm/col/row weights yields a sparse matrix (nonzeros only
    where two samples share a row or column); completion with am weights and
    dense operators yield dense arrays.
    """
    if (op.d1, op.d2) != w.shape:
        raise ParameterError("operator and weight state dimensions disagree")
    if op.kind == "completion":
        builder = _CompletionGram(op)
        if w.variant is Variant.AM:
            return builder.dense(w)
        return builder.sparse(w)
    return _dense_op_gram(op, w)


def assemble_gram_dense(op: MeasurementOperator, w: WeightState) -> np.ndarray:
    """Reference assembly straight from the definition: one W^(-1)(Phi* e_l)
    per column. Quadratic in m; used as an oracle for the structured paths."""
    if (op.d1, op.d2) != w.shape:
        raise ParameterError("operator and weight state dimensions disagree")
    m = op.m
    G = np.empty((m, m))
    unit = np.zeros(m)
    for l in range(m):
        unit[l] = 1.0
        col = weight_inverse_apply(w, op.adjoint_apply(unit))
        G[:, l] = op.apply(col)
        unit[l] = 0.0
    return 0.5 * (G + G.T)


def _gram_solve(G: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve the Gram system G z = y (positive definite in exact arithmetic).

    Cholesky is attempted first. Close to convergence the weight spread can
    push the smallest eigenvalues of the floating-point Gram matrix below
    rounding level, so the factorization may report an indefinite matrix even
    though the exact system is positive definite; the same unmodified system
    is then re-solved with pivoted LU, which is backward stable for any
    nonsingular matrix. The system itself is never altered (no jitter, no
    spectral truncation). Exact singularity or a non-finite result is a
    genuine breakdown and surfaces as NumericalFailure with a condition
    diagnostic.
    """
    if not np.all(np.isfinite(G)):
        raise NumericalFailure("Gram matrix has non-finite entries")
    chol_reason = None
    try:
        c, low = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
        z = scipy.linalg.cho_solve((c, low), y, check_finite=False)
        if np.all(np.isfinite(z)):
            return z
        chol_reason = "non-finite triangular solve"
    except scipy.linalg.LinAlgError as exc:
        chol_reason = str(exc)
    try:
        z = np.linalg.solve(G, y)
    except np.linalg.LinAlgError as exc:
        ev = scipy.linalg.eigvalsh(G)
        raise NumericalFailure(
            "Gram system is singular to working precision "
            f"(eigenvalue range [{ev[0]:.3e}, {ev[-1]:.3e}]; "
            f"Cholesky failed with: {chol_reason}): {exc}"
        ) from exc
    if not np.all(np.isfinite(z)):
        raise NumericalFailure(
            f"non-finite Gram solution (Cholesky failed with: {chol_reason})"
        )
    return z


def _cg_solve(matvec, m, y, cfg: SolverConfig) -> np.ndarray:
    A = scipy.sparse.linalg.LinearOperator((m, m), matvec=matvec, dtype=np.float64)
    z, info = scipy.sparse.linalg.cg(
        A, y, rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_max_iters
    )
    if info != 0:
        raise NumericalFailure(f"conjugate gradient did not converge (info={info})")
    return z


def _wls_solution(op, y, w, cfg, builder=None) -> np.ndarray:
    if cfg.gram_backend == "dense_cholesky":
        if op.kind == "completion":
            builder = builder or _CompletionGram(op)
            G = builder.dense(w)
        else:
            G = _dense_op_gram(op, w)
        z = _gram_solve(G, y)
    else:
        def matvec(z):
            return op.apply(weight_inverse_apply(w, op.adjoint_apply(z)))
        z = _cg_solve(matvec, op.m, y, cfg)
    return weight_inverse_apply(w, op.adjoint_apply(z))


def weighted_ls_step(op: MeasurementOperator, y, w: WeightState, cfg: SolverConfig):
    """Minimize <X_vec, W X_vec> subject to Phi(X) = y.

    Solves the Gram system G z = y, then returns W^(-1)(Phi*(z)). The system
    is solved exactly as assembled (Cholesky, falling back to pivoted LU when
    rounding makes the matrix numerically indefinite); nothing is regularized
    silently, and genuine breakdowns are reported as NumericalFailure.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.m,):
        raise ParameterError(f"expected y of length {op.m}")
    if (op.d1, op.d2) != w.shape:
        raise ParameterError("operator and weight state dimensions disagree")
    return _wls_solution(op, y, w, cfg)


def epsilon_update(eps_prev: float, X_next, r_tilde: int, floor: float = 0.0) -> float:
    """eps_{n+1} = max(floor, min(eps_n, sigma_{r+1}(X_{n+1})))."""
    if not eps_prev > 0:
        raise ParameterError("eps_prev must be positive")
    X_next = np.asarray(X_next, dtype=np.float64)
    s = np.linalg.svd(X_next, compute_uv=False)
    if r_tilde + 1 > s.shape[0]:
        raise ParameterError(
            f"rank estimate {r_tilde} needs sigma_{r_tilde + 1}, but the matrix "
            f"has only {s.shape[0]} singular values"
        )
    return max(float(floor), min(float(eps_prev), float(s[r_tilde])))


def _completion_stationarity(w: WeightState, X, rows, cols) -> float:
    """||P_null(W X)||_F / ||W X||_F with W X formed as U (H o (U^T X V)) V^T;
    for completion the null-space projection just blanks the sampled cells."""
    T = w.U @ (w.H * (w.U.T @ X @ w.V)) @ w.V.T
    total = np.linalg.norm(T)
    if total == 0.0:
        return 0.0
    T = T.copy()
    T[rows, cols] = 0.0
    return float(np.linalg.norm(T) / total)


def solve(instance: ProblemInstance, cfg: SolverConfig, x_init=None):
    """Run the reweighted least-squares loop on one problem instance.

    Starts from identity weights and eps = 1 (or from the weights of x_init
    when an initial iterate is supplied), then alternates the weighted
    least-squares step, the eps shrink, and the weight rebuild until the
    relative iterate change drops below tol_rel_change, the iteration cap is
    reached, the factorization fails, or eps hits 0 exactly (the iterate is
    then exactly rank-deficient and feasible, a terminal state). A fully
    determined system (m = d1*d2) admits a single feasible point, so the loop
    stops converged after one step. Returns (X, trace).
    """
    op = instance.operator
    d1, d2, m = instance.d1, instance.d2, op.m
    if m < 1:
        raise ParameterError("instance has no measurements")
    r = cfg.rank_estimate
    if r + 1 > min(d1, d2):
        raise ParameterError(
            f"rank estimate {r} leaves no sigma_{r + 1} on a "
            f"{d1} x {d2} matrix; need rank_estimate < min(d1, d2)"
        )
    y = instance.y
    ynorm = np.linalg.norm(y)
    gt = instance.ground_truth
    gtnorm = np.linalg.norm(gt) if gt is not None else None

    builder = _CompletionGram(op) if op.kind == "completion" else None
    null_basis = None
    if op.kind == "dense" and d1 * d2 <= 4096:
        from .measurements import null_space_basis

        null_basis = null_space_basis(op)

    if x_init is not None:
        x_init = np.asarray(x_init, dtype=np.float64)
        if x_init.shape != (d1, d2):
            raise ParameterError(f"initial iterate must be {d1} x {d2}")
        w = _state_from_factors(svd(x_init), 1.0, cfg.p, cfg.variant)
    else:
        w = identity_weight_state(d1, d2, cfg.p, cfg.variant)

    trace = SolveTrace(rel_error=[] if gt is not None else None)
    eps = 1.0
    X_prev = x_init
    X = np.zeros((d1, d2))

    for n in range(1, cfg.max_iters + 1):
        try:
            X = _wls_solution(op, y, w, cfg, builder)
        except NumericalFailure as exc:
            trace.status = "numerical_failure"
            trace.message = f"iteration {n}: {exc}"
            X = X_prev if X_prev is not None else X
            break

        # diagnostics against the weights that produced this iterate
        if op.kind == "completion":
            stat = _completion_stationarity(w, X, op.rows, op.cols)
        elif null_basis is not None:
            T = w.U @ (w.H * (w.U.T @ X @ w.V)) @ w.V.T
            tn = np.linalg.norm(T)
            coeffs = [float(np.sum(T * B)) for B in null_basis]
            stat = float(np.linalg.norm(coeffs) / tn) if tn > 0 else 0.0
        else:
            stat = None
        feas = np.linalg.norm(op.apply(X) - y)
        feas = float(feas / ynorm) if ynorm > 0 else float(feas)

        sv = svd(X)
        eps = max(cfg.epsilon_floor, min(eps, float(sv.sigma[r])))
        if X_prev is not None:
            prev_norm = np.linalg.norm(X_prev)
            rel_change = (
                float(np.linalg.norm(X - X_prev) / prev_norm)
                if prev_norm > 0
                else math.inf
            )
        else:
            rel_change = math.inf

        trace.rel_change.append(rel_change)
        trace.epsilon.append(eps)
        trace.sigma.append(sv.sigma.copy())
        trace.g_eps_p.append(float(np.sum((sv.sigma**2 + eps**2) ** (cfg.p / 2.0))))
        trace.feasibility.append(feas)
        trace.stationarity.append(stat)
        trace.weight_condition.append(float(w.H.max() / w.H.min()))
        if gt is not None:
            trace.rel_error.append(float(np.linalg.norm(X - gt) / gtnorm))

        if rel_change < cfg.tol_rel_change:
            trace.status = "converged"
            break
        if m == d1 * d2:
            # the feasible set is a single point; no step can move the iterate
            trace.status = "converged"
            break
        if eps == 0.0:
            trace.status = "converged"
            break
        X_prev = X
        w = _state_from_factors(sv, eps, cfg.p, cfg.variant)

    return X, trace
