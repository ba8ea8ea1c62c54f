"""Circular-shift randomization tests and episode detection.

The null distribution of a lag-dispersion statistic is generated by
cyclically rotating the source columns (jointly, preserving within-source
dependence), rebuilding the operator family, and recomputing the
statistic. P-values use the add-one formula with ties counted as
exceedances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .embedding import DeformationSet, EmbeddingSpec, TimeSeriesPanel, _lag_block
from .errors import ConfigError
from .linalg import inv_sqrt_psd, symmetrize
from .operators import DEFAULT_RIDGE, OperatorKind
from .spectral import (SpectralSummary, dispersion_from_values, lss,
                       spectral_measure_distance)

Statistic = Union[SpectralSummary, str]


@dataclass(frozen=True)
class RandomizationPlan:
    """Number of shifts, offset sampler, tail, and seed."""

    num_shifts: int = 100
    shift_sampler: str = "uniform"  # "uniform" or "evenly_spaced"
    min_offset: Optional[int] = None
    tail: str = "upper"  # "upper" or "two_sided"
    seed: int = 0

    def __post_init__(self):
        if self.num_shifts < 1:
            raise ConfigError("num_shifts must be >= 1")
        if self.shift_sampler not in ("uniform", "evenly_spaced"):
            raise ConfigError(f"unknown shift sampler {self.shift_sampler!r}")
        if self.tail not in ("upper", "two_sided"):
            raise ConfigError(f"unknown tail {self.tail!r}")


@dataclass(frozen=True)
class TestResult:
    observed: float
    replicates: np.ndarray
    p_value: float
    tail: str
    shifts: np.ndarray
    statistic: str


def upper_p(observed: float, replicates: np.ndarray) -> float:
    replicates = np.asarray(replicates, dtype=float)
    return float((1 + np.sum(replicates >= observed)) / (replicates.size + 1))


def two_sided_p(observed: float, replicates: np.ndarray) -> float:
    """2 * min(one-sided p's), capped at 1, each with the add-one formula."""
    replicates = np.asarray(replicates, dtype=float)
    p_up = upper_p(observed, replicates)
    p_lo = float((1 + np.sum(replicates <= observed)) / (replicates.size + 1))
    return min(1.0, 2.0 * min(p_up, p_lo))


def summary_from_name(name: str) -> Statistic:
    """Map a CLI-facing name onto a statistic specification."""
    name = name.lower()
    if name == "wasserstein":
        return "wasserstein"
    if name in ("trace", "frobenius", "logdet", "largest"):
        return SpectralSummary(name)
    if name.startswith("power:"):
        return SpectralSummary.power(float(name.split(":", 1)[1]))
    raise ConfigError(f"unknown statistic {name!r}")


def _statistic_name(stat: Statistic) -> str:
    return stat if isinstance(stat, str) else stat.name


def _eval_statistic(spectra: Dict[int, np.ndarray], stat: Statistic) -> float:
    if isinstance(stat, str):
        if stat != "wasserstein":
            raise ConfigError(f"unknown statistic {stat!r}")
        lags = list(spectra)
        best = 0.0
        for i, l1 in enumerate(lags):
            for l2 in lags[i + 1:]:
                best = max(best, spectral_measure_distance(spectra[l1],
                                                           spectra[l2]))
        return best
    values = {lag: lss(vals, stat) for lag, vals in spectra.items()}
    return dispersion_from_values(values).statistic


class FamilyEngine:
    """Per-lag spectra with the target side precomputed.

    Circular-shift replicates only change the source columns, so target
    feature rows, conditioning projectors, and the target whitening matrix
    are cached once per panel geometry. Caching of the target side is
    disabled when source columns overlap the target or conditioning sets.
    """

    def __init__(self, values: np.ndarray, spec: EmbeddingSpec,
                 deformation: DeformationSet,
                 kind: OperatorKind = OperatorKind.DIRECTED_COHERENCE_GRAM,
                 ridge: float = DEFAULT_RIDGE):
        self.spec = spec
        self.deformation = deformation
        self.kind = kind
        self.ridge = ridge
        self.start = spec.first_valid_row(deformation.max_lag)
        self.t_total = values.shape[0]
        if self.start >= self.t_total - 1:
            raise ConfigError(
                f"series too short (T={self.t_total}) for max lag "
                f"{deformation.max_lag} with the requested depths"
            )
        src = set(spec.source_indices)
        cond = set(spec.conditioning_indices or ())
        self._static_target = not (src & set(spec.target_indices)) and not (src & cond)
        self._cond_q: Dict[int, np.ndarray] = {}
        if spec.conditioning_indices is not None:
            from .embedding import conditioning_block
            for lag in deformation.lags:
                block = conditioning_block(values, spec, lag, self.start)
                design = np.hstack([block, np.ones((block.shape[0], 1))])
                q, _ = np.linalg.qr(design)
                self._cond_q[lag] = q
        self._cached_v: Dict[int, tuple] = {}
        if self._static_target:
            for lag in deformation.lags:
                self._cached_v[lag] = self._target_side(values, lag)

    def _target_side(self, values: np.ndarray, lag: int):
        rows_v = _lag_block(values, self.spec.target_indices,
                            self.spec.effective_target_depth, 0, self.start)
        rows_v = self.spec.target_map.apply(rows_v)
        if lag in self._cond_q:
            q = self._cond_q[lag]
            rows_v = rows_v - q @ (q.T @ rows_v)
        rows_v = rows_v - rows_v.mean(axis=0)
        n = rows_v.shape[0]
        s_vv = symmetrize(rows_v.T @ rows_v / n) + self.ridge * np.eye(rows_v.shape[1])
        w_v = (inv_sqrt_psd(s_vv)
               if self.kind is OperatorKind.DIRECTED_COHERENCE_GRAM else None)
        return rows_v, s_vv, w_v

    def _source_side(self, values: np.ndarray, lag: int) -> np.ndarray:
        rows_u = _lag_block(values, self.spec.source_indices,
                            self.spec.source_depth, lag, self.start)
        rows_u = self.spec.source_map.apply(rows_u)
        if lag in self._cond_q:
            q = self._cond_q[lag]
            rows_u = rows_u - q @ (q.T @ rows_u)
        return rows_u - rows_u.mean(axis=0)

    def spectra(self, values: np.ndarray) -> Dict[int, np.ndarray]:
        """Eigenvalues (descending, >= 0) of each per-lag operator."""
        out: Dict[int, np.ndarray] = {}
        for lag in self.deformation.lags:
            if lag in self._cached_v:
                rows_v, s_vv, w_v = self._cached_v[lag]
            else:
                rows_v, s_vv, w_v = self._target_side(values, lag)
            rows_u = self._source_side(values, lag)
            n = rows_v.shape[0]
            s_uu = (symmetrize(rows_u.T @ rows_u / n)
                    + self.ridge * np.eye(rows_u.shape[1]))
            s_vu = rows_v.T @ rows_u / n
            if self.kind is OperatorKind.DIRECTED_COHERENCE_GRAM:
                a = w_v @ s_vu @ inv_sqrt_psd(s_uu)
                sing = np.linalg.svd(a, compute_uv=False)
                vals = np.zeros(rows_v.shape[1])
                vals[:sing.size] = np.sort(sing ** 2)[::-1]
            else:
                d_v = rows_v.shape[1]
                d = d_v + rows_u.shape[1]
                c = np.empty((d, d))
                c[:d_v, :d_v] = s_vv
                c[d_v:, d_v:] = s_uu
                c[:d_v, d_v:] = s_vu
                c[d_v:, :d_v] = s_vu.T
                vals = np.linalg.eigvalsh(c)[::-1]
            out[lag] = np.clip(vals, 0.0, None)
        return out


def draw_offsets(plan: RandomizationPlan, t_total: int,
                 min_offset: int) -> np.ndarray:
    """Shift offsets in [min_offset, T - min_offset], per the plan sampler."""
    m = plan.min_offset if plan.min_offset is not None else min_offset
    m = max(int(m), 1)
    hi = t_total - m
    if hi < m:
        raise ConfigError(
            f"series too short (T={t_total}) for shift offsets with "
            f"min_offset={m}"
        )
    if plan.shift_sampler == "evenly_spaced":
        return np.unique(np.linspace(m, hi, plan.num_shifts).round().astype(int))
    rng = np.random.default_rng(plan.seed)
    return rng.integers(m, hi + 1, size=plan.num_shifts)


def randomization_test_multi(
        panel: TimeSeriesPanel, spec: EmbeddingSpec,
        deformation: DeformationSet, kind: OperatorKind,
        statistics: Sequence[Statistic], plan: RandomizationPlan,
        ridge: float = DEFAULT_RIDGE) -> Dict[str, TestResult]:
    """One pass of shift randomization shared across several statistics."""
    values = panel.values
    engine = FamilyEngine(values, spec, deformation, kind, ridge)
    offsets = draw_offsets(plan, panel.n_obs,
                           deformation.max_lag + spec.source_depth)
    observed = engine.spectra(values)
    obs = {_statistic_name(s): _eval_statistic(observed, s) for s in statistics}
    reps = {name: np.empty(offsets.size) for name in obs}
    src = list(spec.source_indices)
    work = np.array(values)
    for b, k in enumerate(offsets):
        work[:, src] = np.roll(values[:, src], int(k), axis=0)
        spectra = engine.spectra(work)
        for stat in statistics:
            name = _statistic_name(stat)
            reps[name][b] = _eval_statistic(spectra, stat)
    results = {}
    for stat in statistics:
        name = _statistic_name(stat)
        if plan.tail == "upper":
            p = upper_p(obs[name], reps[name])
        else:
            p = two_sided_p(obs[name], reps[name])
        results[name] = TestResult(observed=obs[name], replicates=reps[name],
                                   p_value=p, tail=plan.tail, shifts=offsets,
                                   statistic=name)
    return results


def randomization_test(panel: TimeSeriesPanel, spec: EmbeddingSpec,
                       deformation: DeformationSet, kind: OperatorKind,
                       statistic: Statistic, plan: RandomizationPlan,
                       ridge: float = DEFAULT_RIDGE) -> TestResult:
    """Shift-randomization p-value for one dispersion statistic."""
    results = randomization_test_multi(panel, spec, deformation, kind,
                                       [statistic], plan, ridge)
    return results[_statistic_name(statistic)]


def detect_episodes(p_values: Sequence[float],
                    alpha: float) -> List[Tuple[int, int]]:
    """Maximal contiguous runs with p < alpha, as closed index intervals."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    p_list = [float(p) for p in p_values]
    episodes: List[Tuple[int, int]] = []
    start = None
    for idx, p in enumerate(p_list):
        if p < alpha:
            if start is None:
                start = idx
        elif start is not None:
            episodes.append((start, idx - 1))
            start = None
    if start is not None:
        episodes.append((start, len(p_list) - 1))
    return episodes
