"""Lag embedding, feature maps, circular shifts, and residualization.

A :class:`TimeSeriesPanel` holds an aligned multivariate series. An
:class:`EmbeddingSpec` names source/target columns and lag depths;
:func:`embed` turns a panel into aligned target/source feature rows for a
given lag. Circular shifts of the source columns provide the null model
used by the inference module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, InsufficientDataError


@dataclass(frozen=True)
class TimeSeriesPanel:
    """Aligned multivariate series with component labels and a time index."""

    labels: tuple
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        times = np.asarray(self.times)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)
        if values.ndim != 2:
            raise DataError("panel values must be a T x K matrix")
        t, k = values.shape
        if t < 2:
            raise InsufficientDataError(f"panel needs T >= 2, got T={t}")
        if k < 2:
            raise DataError(f"panel needs K >= 2 components, got K={k}")
        if len(self.labels) != k:
            raise DataError("number of labels must match number of columns")
        if len(times) != t:
            raise DataError("time index length must match number of rows")
        if not np.all(np.isfinite(values)):
            raise DataError("panel values contain missing or non-finite entries")
        if np.any(times[1:] <= times[:-1]):
            raise DataError("time index must be strictly increasing")
        values.setflags(write=False)

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_components(self) -> int:
        return self.values.shape[1]

    def column_index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigError(f"unknown component label {label!r}") from None


class FeatureMap:
    """Deterministic map applied to stacked lag blocks.

    The output dimension is a fixed function of the input dimension, never
    of the data. Construct via :meth:`identity`, :meth:`monomials`, or
    :meth:`custom`.
    """

    def __init__(self, kind: str, *, max_degree: int = 1,
                 transforms: Sequence[Callable] = (), pairwise: bool = False):
        if kind not in ("identity", "monomials", "custom"):
            raise ConfigError(f"unknown feature map kind {kind!r}")
        if kind == "monomials" and max_degree < 1:
            raise ConfigError("monomials requires max_degree >= 1")
        self.kind = kind
        self.max_degree = int(max_degree)
        self.transforms = tuple(transforms)
        self.pairwise = bool(pairwise)

    @classmethod
    def identity(cls) -> "FeatureMap":
        return cls("identity")

    @classmethod
    def monomials(cls, max_degree: int) -> "FeatureMap":
        return cls("monomials", max_degree=max_degree)

    @classmethod
    def custom(cls, transforms: Sequence[Callable], pairwise: bool = False) -> "FeatureMap":
        return cls("custom", transforms=transforms, pairwise=pairwise)

    def output_dim(self, input_dim: int) -> int:
        if self.kind == "identity":
            return input_dim
        if self.kind == "monomials":
            return input_dim * self.max_degree
        dim = input_dim * len(self.transforms)
        if self.pairwise:
            dim += input_dim * (input_dim - 1) // 2
        return dim

    def apply(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=float)
        if self.kind == "identity":
            return rows
        if self.kind == "monomials":
            parts = [rows ** d for d in range(1, self.max_degree + 1)]
            return np.hstack(parts)
        parts = [np.asarray(f(rows), dtype=float) for f in self.transforms]
        if self.pairwise:
            n, b = rows.shape
            iu, ju = np.triu_indices(b, k=1)
            parts.append(rows[:, iu] * rows[:, ju])
        return np.hstack(parts) if parts else rows[:, :0]


@dataclass(frozen=True)
class DeformationSet:
    """Finite admissible lag set with per-lag positive weights."""

    lags: tuple
    weights: tuple = ()

    def __post_init__(self):
        lags = tuple(int(x) for x in self.lags)
        if not lags:
            raise ConfigError("deformation set must be nonempty")
        if any(x < 0 for x in lags):
            raise ConfigError("lags must be nonnegative")
        if len(set(lags)) != len(lags):
            raise ConfigError("lags must be distinct")
        lags = tuple(sorted(lags))
        weights = self.weights or tuple(1.0 for _ in lags)
        weights = tuple(float(w) for w in weights)
        if len(weights) != len(lags):
            raise ConfigError("weights must match lags in length")
        if any(w <= 0 for w in weights):
            raise ConfigError("weights must be positive")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "weights", weights)

    @property
    def max_lag(self) -> int:
        return self.lags[-1]

    @classmethod
    def from_lags(cls, lags: Sequence[int]) -> "DeformationSet":
        return cls(lags=tuple(lags))


@dataclass(frozen=True)
class EmbeddingSpec:
    """Source/target column sets, lag depths, and feature maps.

    ``target_depth=0`` means contemporaneous-only targets (a single time
    slice); ``target_depth>=1`` stacks that many target lags.
    """

    source_indices: tuple
    target_indices: tuple
    source_depth: int = 1
    target_depth: int = 0
    source_map: FeatureMap = field(default_factory=FeatureMap.identity)
    target_map: FeatureMap = field(default_factory=FeatureMap.identity)
    conditioning_indices: Optional[tuple] = None
    allow_overlap: bool = False

    def __post_init__(self):
        object.__setattr__(self, "source_indices",
                           tuple(int(i) for i in self.source_indices))
        object.__setattr__(self, "target_indices",
                           tuple(int(i) for i in self.target_indices))
        if self.conditioning_indices is not None:
            object.__setattr__(self, "conditioning_indices",
                               tuple(int(i) for i in self.conditioning_indices))
        if not self.source_indices or not self.target_indices:
            raise ConfigError("source and target index sets must be nonempty")
        if self.source_depth < 1:
            raise ConfigError("source_depth must be >= 1")
        if self.target_depth < 0:
            raise ConfigError("target_depth must be >= 0")
        overlap = set(self.source_indices) & set(self.target_indices)
        if overlap and not self.allow_overlap:
            raise ConfigError(
                f"source and target sets overlap on {sorted(overlap)}; "
                "set allow_overlap=True if intended"
            )

    @property
    def effective_target_depth(self) -> int:
        return max(self.target_depth, 1)

    def first_valid_row(self, lag: int) -> int:
        """Earliest row index with a complete target and source block."""
        return max(lag + self.source_depth - 1, self.effective_target_depth - 1)


def _lag_block(values: np.ndarray, columns: Sequence[int], depth: int,
               base_lag: int, start: int) -> np.ndarray:
    """Rows t = start..T-1 of (x_{t-base_lag}, ..., x_{t-base_lag-depth+1})."""
    t_total = values.shape[0]
    cols = list(columns)
    blocks = []
    for ell in range(depth):
        shift = base_lag + ell
        blocks.append(values[start - shift: t_total - shift, cols])
    return np.hstack(blocks)


def embed(panel: TimeSeriesPanel, spec: EmbeddingSpec, lag: int,
          align_from: Optional[int] = None):
    """Aligned target/source feature rows for one lag.

    Returns ``(rows_V, rows_U, effective_T)``. Row t of ``rows_V`` is the
    target map applied to the target lag block at time t; row t of
    ``rows_U`` is the source map applied to the source block at time
    t - lag. ``align_from`` overrides the first usable row so several lags
    can share a common sample.
    """
    return _embed_values(panel.values, spec, lag, align_from)


def _embed_values(values: np.ndarray, spec: EmbeddingSpec, lag: int,
                  align_from: Optional[int] = None):
    if lag < 0:
        raise ConfigError("lag must be nonnegative")
    t_total = values.shape[0]
    start = spec.first_valid_row(lag)
    if align_from is not None:
        if align_from < start:
            raise ConfigError(
                f"align_from={align_from} precedes first valid row {start}"
            )
        start = align_from
    if start >= t_total - 1:
        raise InsufficientDataError(
            f"series too short (T={t_total}) for lag {lag} with the "
            f"requested embedding depths"
        )
    rows_v = _lag_block(values, spec.target_indices,
                        spec.effective_target_depth, 0, start)
    rows_u = _lag_block(values, spec.source_indices,
                        spec.source_depth, lag, start)
    return (spec.target_map.apply(rows_v), spec.source_map.apply(rows_u),
            t_total - start)


def conditioning_block(panel_or_values, spec: EmbeddingSpec, lag: int,
                       align_from: Optional[int] = None) -> np.ndarray:
    """Stacked conditioning rows spanning lags 0 .. lag + source_depth - 1.

    Covers the time span of both the target slice and the source block so
    residualizing on it removes the conditioning signal from either side.
    """
    if spec.conditioning_indices is None:
        raise ConfigError("embedding spec has no conditioning indices")
    values = (panel_or_values.values
              if isinstance(panel_or_values, TimeSeriesPanel) else
              np.asarray(panel_or_values, dtype=float))
    start = spec.first_valid_row(lag) if align_from is None else align_from
    depth = lag + spec.source_depth
    return _lag_block(values, spec.conditioning_indices, depth, 0, start)


def circular_shift(panel: TimeSeriesPanel, indices: Sequence[int],
                   k: int) -> TimeSeriesPanel:
    """Rotate the listed columns by k with wraparound; k is taken mod T."""
    values = shift_columns(panel.values, indices, k)
    return TimeSeriesPanel(panel.labels, panel.times, values)


def shift_columns(values: np.ndarray, indices: Sequence[int], k: int) -> np.ndarray:
    """Array-level circular shift: (shifted x)_t = x_{t-k mod T}."""
    out = np.array(values, dtype=float)
    cols = list(indices)
    out[:, cols] = np.roll(out[:, cols], int(k), axis=0)
    return out


def residualize(rows: np.ndarray, conditioning_rows: np.ndarray) -> np.ndarray:
    """Remove the least-squares projection onto the conditioning columns.

    An intercept column is appended internally; rank deficiency is handled
    by the least-squares pseudoinverse.
    """
    rows = np.asarray(rows, dtype=float)
    cond = np.asarray(conditioning_rows, dtype=float)
    if cond.ndim == 1:
        cond = cond[:, None]
    if rows.shape[0] != cond.shape[0]:
        raise DataError("rows and conditioning rows must have equal length")
    design = np.hstack([cond, np.ones((cond.shape[0], 1))])
    beta, *_ = np.linalg.lstsq(design, rows, rcond=None)
    return rows - design @ beta
