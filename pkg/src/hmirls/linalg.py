"""Dense linear-algebra substrate: SVD with deterministic signs, Schatten norms,
truncation tails, and the spectral form of Kronecker-sum inverses.

All matrices are dense real float64 ``numpy.ndarray`` values. A vectorized matrix
``X_vec`` always means column stacking (Fortran order), so that for symmetric A, B
the Kronecker identities ``(I ⊗ A) X_vec = (A X)_vec`` and ``(B ⊗ I) X_vec = (X B)_vec``
hold; helpers here never depend on the memory layout of the input array.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure, ParameterError, SingularityError

__all__ = [
    "SvdFactors",
    "SpectralPair",
    "svd",
    "schatten_norm",
    "rank",
    "best_rank_r_error",
    "kronsum_inverse_apply",
    "hadamard",
]


@dataclass(frozen=True)
class SvdFactors:
    """Full (square-factor) singular value decomposition X = U diag(sigma) V^T.

    U is d1 x d1 orthogonal, V is d2 x d2 orthogonal, sigma has length
    min(d1, d2), sorted non-increasing.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def shape(self):
        return self.U.shape[0], self.V.shape[0]


@dataclass(frozen=True)
class SpectralPair:
    """Symmetric PSD pair A = U diag(left) U^T, B = V diag(right) V^T given
    spectrally, as needed for Kronecker-sum inversion.

    Invertibility of A (+) B requires left[i] + right[j] > 0 for every (i, j).
    """

    left_spectrum: np.ndarray
    right_spectrum: np.ndarray
    U: np.ndarray
    V: np.ndarray


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ParameterError(f"expected a 2-d matrix, got shape {X.shape}")
    return X


def svd(X) -> SvdFactors:
    """Full SVD with a deterministic sign convention.

    Each left singular vector is flipped so its entry of largest magnitude is
    positive (ties broken by lowest index); the paired right vector is flipped
    with it. Surplus columns of the larger factor get the same rule applied
    directly. Degenerate singular values leave the subspace well defined but
    the basis arbitrary; downstream weight operators depend only on the
    singular values, so any orthonormal basis of a degenerate block is valid.
    """
    X = _as_matrix(X)
    if not np.all(np.isfinite(X)):
        raise ParameterError("matrix entries must be finite")
    try:
        U, s, Vt = np.linalg.svd(X, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    V = Vt.T
    d = s.shape[0]
    for k in range(U.shape[1]):
        col = U[:, k]
        lead = np.argmax(np.abs(col))
        if col[lead] < 0:
            U[:, k] = -col
            if k < d:
                V[:, k] = -V[:, k]
    for k in range(d, V.shape[1]):
        col = V[:, k]
        lead = np.argmax(np.abs(col))
        if col[lead] < 0:
            V[:, k] = -col
    return SvdFactors(U=U, sigma=s, V=V)


def schatten_norm(X, p) -> float:
    """Schatten-p (quasi-)norm (sum_i sigma_i^p)^(1/p); p = inf gives sigma_max.

    Defined for p in (0, inf]; p < 1 yields a quasi-norm. Use rank() for the
    p = 0 counting functional.
    """
    X = _as_matrix(X)
    if not p > 0:
        raise ParameterError(f"p must be positive or inf, got {p}")
    s = np.linalg.svd(X, compute_uv=False)
    if np.isinf(p):
        return float(s[0])
    return float(np.sum(s**p) ** (1.0 / p))


def rank(X, tol: float = 1e-12) -> int:
    """Number of singular values strictly greater than tol * sigma_1."""
    X = _as_matrix(X)
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def best_rank_r_error(X, r: int, p: float) -> float:
    """Schatten-p tail sum_{i>r} sigma_i^p, the best-rank-r approximation gap."""
    X = _as_matrix(X)
    d = min(X.shape)
    if not (isinstance(r, (int, np.integer)) and 0 <= r <= d):
        raise ParameterError(f"r must be an integer in [0, {d}], got {r}")
    if not 0 < p <= 1:
        raise ParameterError(f"p must lie in (0, 1], got {p}")
    s = np.linalg.svd(X, compute_uv=False)
    return float(np.sum(s[r:] ** p))


def kronsum_inverse_apply(sp: SpectralPair, Z) -> np.ndarray:
    """Apply (A (+) B)^(-1) to Z through the spectral pair of A and B.

    With A = U diag(left) U^T and B = V diag(right) V^T, the Kronecker sum
    A (+) B = I (x) A + B (x) I is diagonalized by V (x) U, so the inverse acts as
    U (H o (U^T Z V)) V^T with H_ij = 1 / (left_i + right_j).
    """
    Z = _as_matrix(Z)
    left = np.asarray(sp.left_spectrum, dtype=np.float64)
    right = np.asarray(sp.right_spectrum, dtype=np.float64)
    den = left[:, None] + right[None, :]
    bad = np.nonzero(den <= 0.0)
    if bad[0].size:
        i, j = int(bad[0][0]), int(bad[1][0])
        raise SingularityError(
            f"Kronecker-sum denominator left[{i}] + right[{j}] = {den[i, j]} is not positive"
        )
    H = 1.0 / den
    return sp.U @ (H * (sp.U.T @ Z @ sp.V)) @ sp.V.T


def hadamard(A, B) -> np.ndarray:
    """Entrywise product A o B."""
    A = _as_matrix(A)
    B = _as_matrix(B)
    if A.shape != B.shape:
        raise ParameterError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A * B
