"""Dense symmetric/PSD linear algebra primitives.

All other modules build on these three operations: symmetric
eigendecomposition with a deterministic sign convention, pseudo-inverse
square roots of PSD matrices, and ridge-stabilized sample covariances.
Matrices are plain float ndarrays; symmetry is enforced on construction.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DataError, InsufficientDataError, NumericalError

# Eigenvalues above this (relative, scaled by |lambda_max|) are considered
# genuinely negative rather than round-off.
_PSD_TOL = 1e-10


class EigenSystem(NamedTuple):
    """Eigenvalues in descending order with matching orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray


def symmetrize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def sym_eig(m: np.ndarray) -> EigenSystem:
    """Eigendecomposition of a symmetric matrix.

    Eigenvalues are returned in descending order. Each eigenvector column
    is sign-fixed so its largest-magnitude entry is positive, which makes
    downstream outputs deterministic.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DataError("matrix has non-finite entries")
    w, v = np.linalg.eigh(symmetrize(m))
    w = w[::-1].copy()
    v = v[:, ::-1].copy()
    # Deterministic sign: largest-magnitude entry of each column positive.
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    v *= signs
    return EigenSystem(w, v)


def inv_sqrt_psd(m: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose inverse square root of a PSD matrix.

    Eigenvalues below ``rank_tol * lambda_max`` are treated as null
    directions and mapped to zero. Slightly negative eigenvalues from
    round-off are clipped; genuinely indefinite inputs raise.
    """
    es = sym_eig(m)
    w = es.values
    lam_max = float(w[0]) if w.size else 0.0
    neg_tol = _PSD_TOL * max(1.0, abs(lam_max))
    if w.size and w[-1] < -neg_tol:
        raise NumericalError(
            f"matrix is not PSD: smallest eigenvalue {w[-1]:.3e}"
        )
    w = np.clip(w, 0.0, None)
    if lam_max <= 0.0:
        return np.zeros_like(es.vectors)
    g = np.where(w > rank_tol * lam_max, 1.0 / np.sqrt(np.maximum(w, 1e-300)), 0.0)
    return symmetrize((es.vectors * g) @ es.vectors.T)


def sample_covariance(
    rows: np.ndarray, center: bool = True, ridge: float = 0.0
) -> np.ndarray:
    """Second-moment matrix (1/T) sum z z^T with optional centering and ridge.

    Uses the 1/T normalizer, not 1/(T-1).
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2:
        raise DataError(f"expected a 2-d array of rows, got shape {rows.shape}")
    t = rows.shape[0]
    if t < 2:
        raise InsufficientDataError(f"need at least 2 rows, got {t}")
    if not np.all(np.isfinite(rows)):
        raise DataError("rows contain non-finite entries")
    if center:
        rows = rows - rows.mean(axis=0)
    c = symmetrize(rows.T @ rows / t)
    if ridge:
        c = c + ridge * np.eye(c.shape[0])
    return c
