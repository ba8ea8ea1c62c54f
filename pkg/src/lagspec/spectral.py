"""Scalar spectral summaries and sup-inf dispersion statistics.

A summary f is averaged over an operator's eigenvalues; the dispersion
statistic is the max-minus-min of that average over the admissible lag
set. The measure-level variant replaces the scalar summary with the
1-Wasserstein distance between per-lag empirical eigenvalue
distributions (exact on sorted equal-count atom sets).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, DimensionError
from .linalg import EigenSystem
from .operators import OperatorFamily

_SUMMARY_KINDS = ("trace", "frobenius", "logdet", "power", "largest")


@dataclass(frozen=True)
class SpectralSummary:
    """Scalar function f applied eigenvalue-wise and averaged.

    ``trace``: f(x) = x. ``frobenius``: f(x) = x^2. ``logdet``:
    f(x) = log(x + eps). ``power``: f(x) = x^q with q >= 1. ``largest``
    is the non-averaged edge statistic lambda_1.
    """

    kind: str
    eps: float = 1e-8
    q: float = 2.0

    def __post_init__(self):
        if self.kind not in _SUMMARY_KINDS:
            raise ConfigError(f"unknown spectral summary {self.kind!r}")
        if self.kind == "logdet" and self.eps <= 0:
            raise ConfigError("logdet summary requires eps > 0")
        if self.kind == "power" and self.q < 1:
            raise ConfigError("power summary requires q >= 1")

    @classmethod
    def trace(cls) -> "SpectralSummary":
        return cls("trace")

    @classmethod
    def frobenius(cls) -> "SpectralSummary":
        return cls("frobenius")

    @classmethod
    def logdet(cls, eps: float = 1e-8) -> "SpectralSummary":
        return cls("logdet", eps=eps)

    @classmethod
    def power(cls, q: float) -> "SpectralSummary":
        return cls("power", q=q)

    @classmethod
    def largest(cls) -> "SpectralSummary":
        return cls("largest")

    @property
    def name(self) -> str:
        return self.kind

    def evaluate(self, eigenvalues: np.ndarray) -> float:
        return lss(eigenvalues, self)


def _as_eigenvalues(es) -> np.ndarray:
    if isinstance(es, EigenSystem):
        vals = es.values
    else:
        vals = np.asarray(es, dtype=float)
    return np.clip(vals, 0.0, None)


def lss(es, f: SpectralSummary) -> float:
    """Mean of f over the eigenvalues (lambda_1 for the edge statistic)."""
    vals = _as_eigenvalues(es)
    if f.kind == "largest":
        return float(vals.max()) if vals.size else 0.0
    if f.kind == "trace":
        return float(vals.mean())
    if f.kind == "frobenius":
        return float(np.mean(vals ** 2))
    if f.kind == "logdet":
        return float(np.mean(np.log(vals + f.eps)))
    return float(np.mean(vals ** f.q))


@dataclass(frozen=True)
class DispersionResult:
    """Per-lag values with the sup-inf statistic and extremal lags."""

    per_lag_values: Dict[int, float]
    statistic: float
    sup_lag: int
    inf_lag: int
    kind: str
    per_lag_spectra: Optional[Dict[int, np.ndarray]] = field(
        default=None, repr=False, compare=False)


def dispersion_from_values(per_lag_values: Dict[int, float],
                           kind: str = "scalar") -> DispersionResult:
    lags = list(per_lag_values)
    vals = np.array([per_lag_values[x] for x in lags])
    i_sup, i_inf = int(np.argmax(vals)), int(np.argmin(vals))
    return DispersionResult(
        per_lag_values=dict(per_lag_values),
        statistic=float(vals[i_sup] - vals[i_inf]),
        sup_lag=lags[i_sup],
        inf_lag=lags[i_inf],
        kind=kind,
    )


def dispersion_scalar(family: Union[OperatorFamily, Dict[int, np.ndarray]],
                      f: SpectralSummary) -> DispersionResult:
    """Sup-inf of the spectral summary over the lag set."""
    spectra = family.spectra() if isinstance(family, OperatorFamily) else family
    values = {lag: lss(vals, f) for lag, vals in spectra.items()}
    result = dispersion_from_values(values, kind=f"scalar:{f.name}")
    return DispersionResult(
        per_lag_values=result.per_lag_values,
        statistic=result.statistic,
        sup_lag=result.sup_lag,
        inf_lag=result.inf_lag,
        kind=result.kind,
        per_lag_spectra={lag: _as_eigenvalues(v) for lag, v in spectra.items()},
    )


def spectral_measure_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1-Wasserstein distance between equal-count eigenvalue multisets."""
    a = np.sort(_as_eigenvalues(a))
    b = np.sort(_as_eigenvalues(b))
    if a.shape != b.shape:
        raise DimensionError(
            f"spectral measures need equal atom counts, got {a.size} vs {b.size}"
        )
    return float(np.mean(np.abs(a - b)))


def dispersion_measure(
        family: Union[OperatorFamily, Dict[int, np.ndarray]]) -> DispersionResult:
    """Max pairwise 1-Wasserstein distance between per-lag spectra."""
    spectra = family.spectra() if isinstance(family, OperatorFamily) else family
    spectra = {lag: _as_eigenvalues(v) for lag, v in spectra.items()}
    lags = list(spectra)
    if len(lags) == 1:
        only = lags[0]
        return DispersionResult({only: 0.0}, 0.0, only, only,
                                kind="measure:wasserstein",
                                per_lag_spectra=spectra)
    best = (0.0, lags[0], lags[0])
    for l1, l2 in combinations(lags, 2):
        dist = spectral_measure_distance(spectra[l1], spectra[l2])
        if dist > best[0]:
            best = (dist, l1, l2)
    per_lag = {lag: float(np.mean(spectra[lag])) for lag in lags}
    return DispersionResult(per_lag_values=per_lag, statistic=best[0],
                            sup_lag=best[1], inf_lag=best[2],
                            kind="measure:wasserstein",
                            per_lag_spectra=spectra)


def effective_rank(es) -> float:
    """trace^2 / trace-of-square; 0 by convention when the trace vanishes."""
    vals = _as_eigenvalues(es)
    total = float(vals.sum())
    if total <= 0.0:
        return 0.0
    return total ** 2 / float(np.sum(vals ** 2))
