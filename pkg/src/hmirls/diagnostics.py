"""Executable checks around the solver's variational structure: the smoothed
Schatten objective, its auxiliary functional and the matched auxiliary
matrix, null-space property witnesses, stationarity residuals,
convergence-order estimation, and the local contraction constant of the
error recursion.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, ParameterError, SingularityError
from .measurements import MeasurementOperator, null_space_basis
from .solver import WeightState

__all__ = [
    "OrderFit",
    "NspReport",
    "g_eps_p",
    "j_p",
    "z_opt",
    "weighted_quadratic_form",
    "stationarity_residual",
    "nsp_witness_check",
    "contraction_constant",
    "contraction_predicate",
    "fit_convergence_order",
    "condition_number",
]

WITNESS_NOTE = (
    "witness checks are one-sided: a violated inequality disproves the "
    "null-space property, but finitely many satisfied witnesses never "
    "certify it"
)


@dataclass(frozen=True)
class OrderFit:
    """Least-squares fit of log e_{n+1} against log e_n inside an error window."""

    order: float
    prefactor_log: float
    points_used: int
    window: tuple


@dataclass(frozen=True)
class NspReport:
    """Both null-space inequalities evaluated on a single witness spectrum.

    strong: (sum_{i<=r} s_i^2)^(p/2) < gamma_r / r^(1-p/2) * sum_{i>r} s_i^p.
    weak:   sum_{i<=r} s_i^p < sum_{i>r} s_i^p.
    """

    strong_lhs: float
    strong_rhs: float
    weak_lhs: float
    weak_rhs: float
    satisfied_strong: bool
    satisfied_weak: bool
    note: str = WITNESS_NOTE


def _validate_p(p):
    if not 0.0 < p <= 1.0:
        raise ParameterError(f"p must lie in (0, 1], got {p}")


def g_eps_p(X, eps: float, p: float) -> float:
    """Smoothed Schatten objective sum_i (sigma_i^2 + eps^2)^(p/2); at eps = 0
    this is the Schatten-p quasi-norm raised to the p."""
    if eps < 0:
        raise ParameterError("eps must be non-negative")
    _validate_p(p)
    s = np.linalg.svd(np.asarray(X, dtype=np.float64), compute_uv=False)
    return float(np.sum((s**2 + eps**2) ** (p / 2.0)))


def z_opt(X, eps: float, p: float) -> np.ndarray:
    """The auxiliary matrix sum_i (sigma_i^2 + eps^2)^((p-2)/2) u_i v_i^T.

    It is the stationary point of j_p(X, eps, .) matched to X: plugging it in
    recovers the smoothed objective, j_p(X, eps, z_opt(X, eps, p)) =
    g_eps_p(X, eps, p). (It need not be a global minimizer in Z; the
    functional is non-convex in that argument.)
    """
    if eps < 0:
        raise ParameterError("eps must be non-negative")
    _validate_p(p)
    X = np.asarray(X, dtype=np.float64)
    U, s, Vt = np.linalg.svd(X, full_matrices=True)
    if eps == 0.0 and s.min() == 0.0:
        raise SingularityError("eps = 0 with a rank-deficient matrix")
    d = s.shape[0]
    coef = (s**2 + eps**2) ** ((p - 2.0) / 2.0)
    return (U[:, :d] * coef) @ Vt[:d, :]


def j_p(X, eps: float, Z, p: float) -> float:
    """Auxiliary functional of the smoothed objective.

    Value (p/2) <X_vec, W(Z) X_vec> + (eps^2 p / 2) tr sigma(Z)
    + ((2-p)/2) sum sigma_i(Z)^(p/(p-2)), where W(Z) carries the
    harmonic-mean coefficients 2/(1/s_i + 1/s_j) of Z's spectrum
    (pseudo-inverted in the padded range). Rank-deficient Z gives +inf.
    """
    if eps < 0:
        raise ParameterError("eps must be non-negative")
    _validate_p(p)
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if X.shape != Z.shape:
        raise ParameterError(f"shape mismatch: {X.shape} vs {Z.shape}")
    d1, d2 = Z.shape
    d = min(d1, d2)
    Uz, s, Vzt = np.linalg.svd(Z, full_matrices=True)
    if s[0] == 0.0 or s[d - 1] <= 1e-12 * s[0]:
        return math.inf
    pinv_left = np.zeros(d1)
    pinv_left[:d] = 1.0 / s
    pinv_right = np.zeros(d2)
    pinv_right[:d] = 1.0 / s
    H = 2.0 / (pinv_left[:, None] + pinv_right[None, :])
    quad = float(np.sum(H * (Uz.T @ X @ Vzt.T) ** 2))
    return float(
        0.5 * p * quad
        + 0.5 * eps**2 * p * np.sum(s)
        + 0.5 * (2.0 - p) * np.sum(s ** (p / (p - 2.0)))
    )


def weighted_quadratic_form(w: WeightState, X) -> float:
    """<X_vec, W X_vec> = sum_ij H_ij <u_i, X v_j>^2."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape != w.shape:
        raise ParameterError(f"expected shape {w.shape}, got {X.shape}")
    return float(np.sum(w.H * (w.U.T @ X @ w.V) ** 2))


def stationarity_residual(op: MeasurementOperator, w: WeightState, X) -> float:
    """||P_null(W X)||_F / ||W X||_F, where W X is formed spectrally as
    U (H o (U^T X V)) V^T and P_null projects onto ker(Phi).

    Zero characterizes stationary points of the weighted least-squares
    problem; the output of a successful WLS step drives this to roundoff.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape != w.shape:
        raise ParameterError(f"expected shape {w.shape}, got {X.shape}")
    T = w.U @ (w.H * (w.U.T @ X @ w.V)) @ w.V.T
    total = float(np.linalg.norm(T))
    if total == 0.0:
        return 0.0
    if op.kind == "completion":
        T = T.copy()
        T[op.rows, op.cols] = 0.0
        return float(np.linalg.norm(T) / total)
    basis = null_space_basis(op)
    coeffs = np.array([np.sum(T * B) for B in basis])
    return float(np.linalg.norm(coeffs) / total)


def nsp_witness_check(X, r: int, p: float, gamma_r: float) -> NspReport:
    """Evaluate both null-space inequalities on one witness matrix.

    The caller asserts membership of X in the operator's null space; only the
    spectrum enters here.
    """
    _validate_p(p)
    if gamma_r <= 0:
        raise ParameterError("gamma_r must be positive")
    X = np.asarray(X, dtype=np.float64)
    d = min(X.shape)
    if not 1 <= r < d:
        raise ParameterError(f"r must lie in [1, {d - 1}], got {r}")
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] == 0.0:
        raise ParameterError("witness must be nonzero")
    strong_lhs = float(np.sum(s[:r] ** 2) ** (p / 2.0))
    strong_rhs = float(gamma_r / r ** (1.0 - p / 2.0) * np.sum(s[r:] ** p))
    weak_lhs = float(np.sum(s[:r] ** p))
    weak_rhs = float(np.sum(s[r:] ** p))
    return NspReport(
        strong_lhs=strong_lhs,
        strong_rhs=strong_rhs,
        weak_lhs=weak_lhs,
        weak_rhs=weak_rhs,
        satisfied_strong=strong_lhs < strong_rhs,
        satisfied_weak=weak_lhs < weak_rhs,
    )


def contraction_constant(gamma_2r, d, r, p, sigma_r_X0, zeta, kappa) -> float:
    """The constant mu of the local error recursion
    ||e_{n+1}|| <= mu^(1/p) ||e_n||^(2-p).

    mu = 2^(5p) (1+g)^p (g(3+g)(1+g)/(1-g))^(2-p) ((d-r)/r)^(2-p/2) r^p
         * sigma_r^(p(p-1)) / (1-zeta)^(2p) * kappa^p,   g = gamma_2r.
    """
    if not 0.0 < gamma_2r < 1.0:
        raise ParameterError("gamma_2r must lie in (0, 1)")
    if not 0.0 < zeta < 1.0:
        raise ParameterError("zeta must lie in (0, 1)")
    if not kappa >= 1.0:
        raise ParameterError("kappa must be at least 1")
    _validate_p(p)
    if not 1 <= r <= d / 2:
        raise ParameterError("r must satisfy 1 <= r <= d/2")
    if not sigma_r_X0 > 0:
        raise ParameterError("sigma_r_X0 must be positive")
    g = gamma_2r
    return float(
        2.0 ** (5 * p)
        * (1 + g) ** p
        * (g * (3 + g) * (1 + g) / (1 - g)) ** (2 - p)
        * ((d - r) / r) ** (2 - p / 2.0)
        * r**p
        * sigma_r_X0 ** (p * (p - 1)) / (1 - zeta) ** (2 * p)
        * kappa**p
    )


def contraction_predicate(mu: float, eta_sup_norm: float, p: float) -> bool:
    """Locality test mu * ||eta||_inf^(p(1-p)) < 1 for the error recursion to
    contract; at p = 1 the exponent vanishes and this degenerates to mu < 1."""
    _validate_p(p)
    if mu <= 0 or eta_sup_norm < 0:
        raise ParameterError("mu must be positive and eta_sup_norm non-negative")
    return bool(mu * eta_sup_norm ** (p * (1.0 - p)) < 1.0)


def fit_convergence_order(errors, window=(1e-11, 1e-2)) -> OrderFit:
    """Fit e_{n+1} ~ C e_n^q over consecutive error pairs strictly inside the
    window; the slope q of the log-log regression estimates the convergence
    order. Needs at least three in-window values forming consecutive pairs."""
    lo, hi = window
    if not 0 < lo < hi:
        raise ParameterError(f"window must satisfy 0 < lo < hi, got {window}")
    e = np.asarray(list(errors), dtype=np.float64)
    if e.ndim != 1:
        raise ParameterError("errors must be a 1-d sequence")
    inside = (e > lo) & (e < hi)
    pair_idx = np.flatnonzero(inside[:-1] & inside[1:])
    used = set(pair_idx) | set(pair_idx + 1)
    if len(used) < 3:
        raise InsufficientDataError(
            f"only {len(used)} usable error values inside window {window}; need 3"
        )
    x = np.log(e[pair_idx])
    y = np.log(e[pair_idx + 1])
    if np.ptp(x) < 1e-15:
        raise InsufficientDataError("error values inside the window do not vary")
    slope, intercept = np.polyfit(x, y, 1)
    return OrderFit(
        order=float(slope),
        prefactor_log=float(intercept),
        points_used=len(used),
        window=(float(lo), float(hi)),
    )


def condition_number(X, r: int) -> float:
    """sigma_1 / sigma_r."""
    X = np.asarray(X, dtype=np.float64)
    d = min(X.shape)
    if not 1 <= r <= d:
        raise ParameterError(f"r must lie in [1, {d}], got {r}")
    s = np.linalg.svd(X, compute_uv=False)
    if s[r - 1] == 0.0:
        raise SingularityError(f"sigma_{r} is zero")
    return float(s[0] / s[r - 1])
