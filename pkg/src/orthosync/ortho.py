"""Small dense matrix numerics: projection onto O(d), Haar sampling, eigendecompositions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjectionError, NumericalFailureError

__all__ = [
    "EigenDecomposition",
    "project_orthogonal",
    "random_orthogonal",
    "general_eigen",
    "symmetric_eigen",
    "spectral_norm",
    "REAL_TOL",
    "GAP_TOL",
    "SINGULAR_TOL",
]

# relative to ||M||_2
REAL_TOL = 1e-9
GAP_TOL = 1e-7
SINGULAR_TOL = 1e-12


def project_orthogonal(M, tol: float = SINGULAR_TOL) -> np.ndarray:
    """Nearest orthogonal matrix in Frobenius norm, ``W1 @ W2.T`` for ``M = W1 S W2.T``.

    Raises :class:`DegenerateProjectionError` when the smallest singular value is
    below ``tol`` times the largest, since the projection is then not unique.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    try:
        W1, s, W2t = np.linalg.svd(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD did not converge: {exc}") from exc
    if s[0] == 0 or s[-1] < tol * s[0]:
        raise DegenerateProjectionError(
            f"singular input (sigma_min/sigma_max = {s[-1] / s[0] if s[0] else 0.0:.3e})"
        )
    return W1 @ W2t


def random_orthogonal(d: int, seed=None) -> np.ndarray:
    """Haar-distributed sample from O(d).

    QR of a Gaussian matrix with the signs of R's diagonal pushed into Q, which
    makes the distribution exactly Haar (Mezzadri 2007).
    """
    if d < 1:
        raise ValueError(f"d must be positive, got {d}")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))


@dataclass(frozen=True)
class EigenDecomposition:
    """``M = P_inv @ diag(eigenvalues) @ P``.

    Columns of ``P_inv`` are right eigenvectors, rows of ``P`` left eigenvectors.
    Rows of ``P`` have unit norm and their largest-magnitude entry is real positive.
    """

    eigenvalues: np.ndarray
    P_inv: np.ndarray
    P: np.ndarray
    all_real: bool
    all_distinct: bool
    all_positive: bool

    def reconstruct(self) -> np.ndarray:
        return self.P_inv @ np.diag(self.eigenvalues) @ self.P


def _phase_normalize_rows(P: np.ndarray) -> np.ndarray:
    scale = np.linalg.norm(P, axis=1)
    pivot = P[np.arange(P.shape[0]), np.argmax(np.abs(P), axis=1)]
    phase = pivot / np.abs(pivot)
    return P / (scale * phase)[:, None]


def general_eigen(M, real_tol: float | None = None, gap_tol: float | None = None) -> EigenDecomposition:
    """Eigendecomposition of a general real square matrix.

    Eigenvalues are sorted by descending real part, then descending imaginary
    part. ``real_tol`` and ``gap_tol`` default to ``REAL_TOL * ||M||_2`` and
    ``GAP_TOL * ||M||_2``.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    norm = spectral_norm(M)
    real_tol = REAL_TOL * norm if real_tol is None else real_tol
    gap_tol = GAP_TOL * norm if gap_tol is None else gap_tol
    try:
        w, V = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"eigenvalue iteration did not converge: {exc}") from exc

    order = np.lexsort((-w.imag, -w.real))
    w, V = w[order], V[:, order]
    all_real = bool(np.all(np.abs(w.imag) <= real_tol))
    if all_real:
        w, V = w.real.copy(), V.real.copy()
    diffs = np.abs(w[:, None] - w[None, :]) + np.diag(np.full(len(w), np.inf))
    all_distinct = bool(np.all(diffs > gap_tol)) if len(w) > 1 else True
    all_positive = bool(all_real and np.all(w.real > real_tol))

    if np.linalg.cond(V) <= 1 / np.finfo(float).eps:
        try:
            P = _phase_normalize_rows(np.linalg.inv(V))
            return EigenDecomposition(w, np.linalg.inv(P), P, all_real, all_distinct, all_positive)
        except np.linalg.LinAlgError:
            pass
    # defective (or numerically so): no eigenvector basis, keep V as-is for the caller to inspect
    return EigenDecomposition(w, V, np.linalg.pinv(V), all_real, False, all_positive)


def symmetric_eigen(S, sym_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    fro = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > sym_tol * fro:
        raise ValueError("matrix is not symmetric")
    try:
        lam, V = np.linalg.eigh((S + S.T) / 2)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"symmetric eigensolver did not converge: {exc}") from exc
    return lam, V


def spectral_norm(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))
