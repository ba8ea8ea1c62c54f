"""Data-generating processes and the Monte Carlo harness.

All DGPs share an AR(1) baseline (independent columns, standard Gaussian
innovations) with directional signal injected at a single lag. ``strength``
is the ratio of injected signal variance to the unit innovation variance
at the target, so power curves are comparable across DGP kinds.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import signal, stats

from .embedding import (DeformationSet, EmbeddingSpec, FeatureMap,
                        TimeSeriesPanel)
from .errors import ConfigError, InsufficientDataError, NumericalError
from .inference import RandomizationPlan, randomization_test_multi
from .operators import OperatorKind
from .spectral import SpectralSummary

_KINDS = ("null", "edge_rank_one", "bulk", "rank_r", "many_to_one",
          "group_to_group", "nonlinear_quadratic", "confounded")

_BURN_IN = 200


@dataclass(frozen=True)
class DgpSpec:
    """One synthetic data-generating process.

    Column layout: source columns first, then target columns, then plain
    noise columns up to K; the confounded kind appends the latent process
    as an extra observed column labelled ``H`` when
    ``observe_confounder`` is set.
    """

    kind: str
    T: int
    K: int
    rho: float = 0.3
    tau_star: int = 2
    strength: float = 1.0
    seed: int = 0
    rank: int = 1
    n_sources: Optional[int] = None
    n_targets: Optional[int] = None
    theta_direct: float = 0.0
    rho_confounder: float = 0.5
    observe_confounder: bool = False

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown DGP kind {self.kind!r}")
        if not abs(self.rho) < 1:
            raise ConfigError("AR coefficient must satisfy |rho| < 1")
        if self.tau_star < 1:
            raise ConfigError("tau_star must be >= 1")
        if self.T < 10 or self.K < 2:
            raise ConfigError("need T >= 10 and K >= 2")

    @property
    def source_columns(self) -> Tuple[int, ...]:
        if self.kind in ("rank_r", "group_to_group", "many_to_one"):
            return tuple(range(self._n_src))
        return (0,)

    @property
    def target_columns(self) -> Tuple[int, ...]:
        if self.kind == "bulk":
            return tuple(range(1, 1 + self._n_bulk))
        if self.kind in ("rank_r", "group_to_group"):
            return tuple(range(self._n_src, self._n_src + self._n_tgt))
        if self.kind == "many_to_one":
            return (self._n_src,)
        return (1,)

    @property
    def confounder_column(self) -> Optional[int]:
        if self.kind == "confounded" and self.observe_confounder:
            return self.K
        return None

    @property
    def _n_src(self) -> int:
        if self.kind in ("rank_r", "group_to_group"):
            n = self.n_sources if self.n_sources is not None else self.K // 2
        elif self.kind == "many_to_one":
            n = self.n_sources if self.n_sources is not None else 2
        else:
            n = 1
        if n < 1 or n >= self.K:
            raise ConfigError(f"invalid number of sources {n} for K={self.K}")
        return n

    @property
    def _n_tgt(self) -> int:
        n = (self.n_targets if self.n_targets is not None
             else self.K - self._n_src)
        if n < 1 or self._n_src + n > self.K:
            raise ConfigError(f"invalid number of targets {n} for K={self.K}")
        return n

    @property
    def _n_bulk(self) -> int:
        n = math.ceil(self.K / 2)
        if 1 + n > self.K:
            n = self.K - 1
        return n


def _ar1(innovations: np.ndarray, rho: float) -> np.ndarray:
    return signal.lfilter([1.0], [1.0, -rho], innovations, axis=0)


def _rank_loadings(rng: np.random.Generator, n_out: int, n_in: int,
                   rank: int, total_variance: float,
                   var_x: float) -> np.ndarray:
    """Rank-r loading matrix with fixed total injected signal variance."""
    if rank > min(n_out, n_in):
        raise ConfigError(f"rank {rank} exceeds min({n_out}, {n_in})")
    a, _ = np.linalg.qr(rng.standard_normal((n_out, rank)))
    b, _ = np.linalg.qr(rng.standard_normal((n_in, rank)))
    loadings = a @ b.T  # squared Frobenius norm is exactly rank
    return loadings * math.sqrt(total_variance / (rank * var_x))


def generate(dgp: DgpSpec) -> TimeSeriesPanel:
    """Seeded, reproducible panel for the given DGP."""
    rng = np.random.default_rng(dgp.seed)
    length = dgp.T + _BURN_IN
    x = _ar1(rng.standard_normal((length, dgp.K)), dgp.rho)
    var_x = 1.0 / (1.0 - dgp.rho ** 2)
    tau = dgp.tau_star
    lagged = lambda col: np.concatenate([np.zeros(tau), col[:-tau]])  # noqa: E731

    extra = None
    extra_label = None
    if dgp.kind == "edge_rank_one":
        c = math.sqrt(dgp.strength / var_x)
        x[:, 1] += c * lagged(x[:, 0])
    elif dgp.kind == "bulk":
        c = math.sqrt(dgp.strength / (len(dgp.target_columns) * var_x))
        shifted = lagged(x[:, 0])
        for j in dgp.target_columns:
            x[:, j] += c * shifted
    elif dgp.kind in ("rank_r", "group_to_group"):
        src = list(dgp.source_columns)
        tgt = list(dgp.target_columns)
        loadings = _rank_loadings(rng, len(tgt), len(src), dgp.rank,
                                  dgp.strength, var_x)
        shifted = np.vstack([lagged(x[:, i]) for i in src]).T
        x[:, tgt] += shifted @ loadings.T
    elif dgp.kind == "many_to_one":
        src = list(dgp.source_columns)
        c = math.sqrt(dgp.strength / (len(src) * var_x))
        x[:, dgp.target_columns[0]] += c * sum(lagged(x[:, i]) for i in src)
    elif dgp.kind == "nonlinear_quadratic":
        theta = math.sqrt(dgp.strength / (2.0 * var_x ** 2))
        x[:, 1] += theta * (lagged(x[:, 0]) ** 2 - var_x)
    elif dgp.kind == "confounded":
        h = _ar1(rng.standard_normal(length), dgp.rho_confounder)
        x[:, 0] += h
        x[:, 1] += h
        x[:, 1] += dgp.theta_direct * lagged(x[:, 0])
        if dgp.observe_confounder:
            extra = h
            extra_label = "H"

    values = x[_BURN_IN:, :]
    labels = [f"X{j + 1:02d}" for j in range(dgp.K)]
    if extra is not None:
        values = np.column_stack([values, extra[_BURN_IN:]])
        labels.append(extra_label)
    return TimeSeriesPanel(tuple(labels), np.arange(dgp.T), values)


def granger_f_test(panel: TimeSeriesPanel, source, target,
                   order: int = 1) -> float:
    """Classical F-test of the source's lags in the target regression.

    Compares the restricted model (own lags plus intercept) with the
    unrestricted model adding the source's lags.
    """
    if order < 1:
        raise ConfigError("order must be >= 1")
    s = panel.column_index(source) if not isinstance(source, (int, np.integer)) else int(source)
    j = panel.column_index(target) if not isinstance(target, (int, np.integer)) else int(target)
    y_full = panel.values[:, j]
    x_full = panel.values[:, s]
    t_total = y_full.size
    if t_total <= 2 * (2 * order + 1):
        raise InsufficientDataError("series too short for the requested order")
    y = y_full[order:]
    own = np.column_stack([y_full[order - ell - 1: t_total - ell - 1]
                           for ell in range(order)])
    cross = np.column_stack([x_full[order - ell - 1: t_total - ell - 1]
                             for ell in range(order)])
    ones = np.ones((y.size, 1))
    restricted = np.hstack([ones, own])
    unrestricted = np.hstack([ones, own, cross])

    def rss(design):
        beta, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ beta
        return float(resid @ resid)

    rss_r = rss(restricted)
    rss_u = rss(unrestricted)
    df_den = y.size - unrestricted.shape[1]
    if df_den <= 0 or rss_u <= 0.0:
        raise NumericalError("degenerate regression in Granger F-test")
    f_stat = ((rss_r - rss_u) / order) / (rss_u / df_den)
    return float(stats.f.sf(max(f_stat, 0.0), order, df_den))


@dataclass(frozen=True)
class PipelineConfig:
    """How each simulated panel is tested."""

    lags: tuple = (1, 2, 3, 4, 5)
    source_depth: int = 5
    target_depth: int = 5
    source_map: FeatureMap = field(default_factory=FeatureMap.identity)
    target_map: FeatureMap = field(default_factory=FeatureMap.identity)
    kind: OperatorKind = OperatorKind.DIRECTED_COHERENCE_GRAM
    ridge: float = 1e-8
    shifts: int = 100
    statistics: tuple = (SpectralSummary.trace(),)
    condition_on_confounder: bool = False
    granger_order: Optional[int] = None


@dataclass
class McResult:
    """Per-statistic p-values and rejection rates over the MC replications."""

    reps: int
    alpha: float
    p_values: Dict[str, np.ndarray]
    dgp: DgpSpec
    pipeline: PipelineConfig

    @property
    def rejection_rates(self) -> Dict[str, float]:
        return {name: float(np.mean(p < self.alpha))
                for name, p in self.p_values.items()}

    def standard_error(self, name: str) -> float:
        r = self.rejection_rates[name]
        return math.sqrt(r * (1.0 - r) / self.reps)


def embedding_spec_for(dgp: DgpSpec, pipeline: PipelineConfig) -> EmbeddingSpec:
    conditioning = None
    if pipeline.condition_on_confounder:
        if dgp.confounder_column is None:
            raise ConfigError(
                "conditioning requested but the DGP exposes no confounder column"
            )
        conditioning = (dgp.confounder_column,)
    return EmbeddingSpec(
        source_indices=dgp.source_columns,
        target_indices=dgp.target_columns,
        source_depth=pipeline.source_depth,
        target_depth=pipeline.target_depth,
        source_map=pipeline.source_map,
        target_map=pipeline.target_map,
        conditioning_indices=conditioning,
    )


def _run_one_rep(dgp: DgpSpec, pipeline: PipelineConfig, dgp_seed: int,
                 plan_seed: int) -> Dict[str, float]:
    panel = generate(replace(dgp, seed=dgp_seed))
    spec = embedding_spec_for(dgp, pipeline)
    deformation = DeformationSet.from_lags(pipeline.lags)
    plan = RandomizationPlan(num_shifts=pipeline.shifts, seed=plan_seed)
    results = randomization_test_multi(panel, spec, deformation,
                                       pipeline.kind, pipeline.statistics,
                                       plan, pipeline.ridge)
    out = {name: res.p_value for name, res in results.items()}
    if pipeline.granger_order is not None:
        out["granger"] = granger_f_test(panel, dgp.source_columns[0],
                                        dgp.target_columns[0],
                                        order=pipeline.granger_order)
    return out


def _rep_worker(args):
    return _run_one_rep(*args)


def run_mc(dgp: DgpSpec, pipeline: PipelineConfig, reps: int,
           alpha: float = 0.05, seed: int = 0, n_jobs: int = 1) -> McResult:
    """Seeded Monte Carlo loop: generate, test, collect p-values.

    Per-rep seeds are spawned from the master seed, so results do not
    depend on the degree of parallelism.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    seed_seq = np.random.SeedSequence(seed)
    children = seed_seq.spawn(reps)
    tasks = []
    for child in children:
        state = child.generate_state(2)
        tasks.append((dgp, pipeline, int(state[0]), int(state[1])))
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(_rep_worker, tasks, chunksize=4))
    else:
        rows = [_rep_worker(task) for task in tasks]
    names = list(rows[0])
    p_values = {name: np.array([row[name] for row in rows]) for name in names}
    return McResult(reps=reps, alpha=alpha, p_values=p_values, dgp=dgp,
                    pipeline=pipeline)


def mc_result_rows(cell_name: str, result: McResult) -> list:
    """Flat rows (one per statistic) for CSV emission."""
    rows = []
    for name, rate in sorted(result.rejection_rates.items()):
        rows.append({
            "cell": cell_name,
            "statistic": name,
            "reps": result.reps,
            "alpha": result.alpha,
            "rejection_rate": rate,
            "mc_std_error": result.standard_error(name),
        })
    return rows
