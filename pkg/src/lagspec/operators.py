"""Lag-indexed dependence operator construction.

Two operator kinds are supported: the stacked second-moment matrix of the
joint target/source feature vector, and the Gram matrix A A^T of the
whitened cross-covariance (directed coherence) operator

    A(lag) = S_VV^{-1/2} S_VU(lag) S_UU(lag)^{-1/2},

whose singular values are canonical correlations between target features
and lagged source features. Families over a lag set share one aligned
sample (rows valid for the maximum lag) so per-lag statistics are
comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

import numpy as np

from .embedding import (DeformationSet, EmbeddingSpec, TimeSeriesPanel,
                        _embed_values, conditioning_block)
from .errors import ConfigError
from .linalg import inv_sqrt_psd, sample_covariance, sym_eig, symmetrize

DEFAULT_RIDGE = 1e-8


class OperatorKind(Enum):
    STACKED_COVARIANCE = "stacked"
    DIRECTED_COHERENCE_GRAM = "coherence"


@dataclass(frozen=True)
class DirectedCoherence:
    """Whitened cross-covariance matrix with cached singular values."""

    matrix: np.ndarray
    singular_values: np.ndarray

    @property
    def operator_norm(self) -> float:
        return float(self.singular_values[0]) if self.singular_values.size else 0.0

    @property
    def energy(self) -> float:
        """Squared Frobenius norm (total lag energy)."""
        return float(np.sum(self.singular_values ** 2))


@dataclass(frozen=True)
class OperatorFamily:
    """Per-lag symmetric operators plus the weighted aggregate, when defined."""

    kind: OperatorKind
    deformation: DeformationSet
    per_lag: Dict[int, np.ndarray]
    coherence: Optional[Dict[int, DirectedCoherence]] = None
    aggregate: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        first = next(iter(self.per_lag.values()))
        return first.shape[0]

    def spectra(self) -> Dict[int, np.ndarray]:
        """Descending, nonnegative-clipped eigenvalues per lag."""
        return {lag: np.clip(sym_eig(m).values, 0.0, None)
                for lag, m in self.per_lag.items()}


def _prepared_blocks(values: np.ndarray, spec: EmbeddingSpec, lag: int,
                     align_from: Optional[int]):
    """Centered (and residualized, if configured) V and U rows for one lag."""
    rows_v, rows_u, _ = _embed_values(values, spec, lag, align_from)
    if spec.conditioning_indices is not None:
        start = spec.first_valid_row(lag) if align_from is None else align_from
        cond = conditioning_block(values, spec, lag, start)
        design = np.hstack([cond, np.ones((cond.shape[0], 1))])
        q, _ = np.linalg.qr(design)
        rows_v = rows_v - q @ (q.T @ rows_v)
        rows_u = rows_u - q @ (q.T @ rows_u)
    rows_v = rows_v - rows_v.mean(axis=0)
    rows_u = rows_u - rows_u.mean(axis=0)
    return rows_v, rows_u


def build_stacked(panel: TimeSeriesPanel, spec: EmbeddingSpec, lag: int,
                  ridge: float = DEFAULT_RIDGE,
                  align_from: Optional[int] = None) -> np.ndarray:
    """Ridge-stabilized covariance of the stacked (V, U) feature rows."""
    rows_v, rows_u = _prepared_blocks(panel.values, spec, lag, align_from)
    return sample_covariance(np.hstack([rows_v, rows_u]), center=True,
                             ridge=ridge)


def coherence_from_blocks(rows_v: np.ndarray, rows_u: np.ndarray,
                          ridge: float = DEFAULT_RIDGE) -> DirectedCoherence:
    """Whitened cross-covariance of pre-centered target/source rows."""
    n = rows_v.shape[0]
    s_vv = symmetrize(rows_v.T @ rows_v / n) + ridge * np.eye(rows_v.shape[1])
    s_uu = symmetrize(rows_u.T @ rows_u / n) + ridge * np.eye(rows_u.shape[1])
    s_vu = rows_v.T @ rows_u / n
    a = inv_sqrt_psd(s_vv) @ s_vu @ inv_sqrt_psd(s_uu)
    sing = np.linalg.svd(a, compute_uv=False)
    return DirectedCoherence(matrix=a, singular_values=sing)


def build_coherence(panel: TimeSeriesPanel, spec: EmbeddingSpec, lag: int,
                    ridge: float = DEFAULT_RIDGE,
                    align_from: Optional[int] = None) -> DirectedCoherence:
    """Directed coherence operator at one lag on the aligned sample."""
    rows_v, rows_u = _prepared_blocks(panel.values, spec, lag, align_from)
    return coherence_from_blocks(rows_v, rows_u, ridge)


def build_family(panel: TimeSeriesPanel, spec: EmbeddingSpec,
                 deformation: DeformationSet,
                 kind: OperatorKind = OperatorKind.DIRECTED_COHERENCE_GRAM,
                 ridge: float = DEFAULT_RIDGE) -> OperatorFamily:
    """All per-lag operators on one shared aligned sample.

    For the coherence-Gram kind, the per-lag matrix is A A^T and the
    aggregate is the weight-summed Gram.
    """
    if not isinstance(kind, OperatorKind):
        raise ConfigError(f"unknown operator kind {kind!r}")
    align_from = spec.first_valid_row(deformation.max_lag)
    per_lag: Dict[int, np.ndarray] = {}
    coherence: Dict[int, DirectedCoherence] = {}
    aggregate = None
    for lag, weight in zip(deformation.lags, deformation.weights):
        if kind is OperatorKind.STACKED_COVARIANCE:
            per_lag[lag] = build_stacked(panel, spec, lag, ridge, align_from)
        else:
            coh = build_coherence(panel, spec, lag, ridge, align_from)
            gram = symmetrize(coh.matrix @ coh.matrix.T)
            per_lag[lag] = gram
            coherence[lag] = coh
            aggregate = gram * weight if aggregate is None else aggregate + gram * weight
    return OperatorFamily(
        kind=kind,
        deformation=deformation,
        per_lag=per_lag,
        coherence=coherence or None,
        aggregate=aggregate,
    )
