"""Rolling-window operator monitoring.

Each window builds whitened cross-covariance operators A_tau from
lag-embedded drivers (all columns) onto contemporaneous targets (all
columns), aggregates C = sum_tau w_tau A_tau A_tau^T, and extracts the
leading eigenvalue, trace, effective rank, lag-energy profile, hub
scores, and a driver-to-driver contribution matrix. Per-window
significance comes from circular shifts of the driver block.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .embedding import TimeSeriesPanel
from .errors import ConfigError, DimensionError
from .inference import detect_episodes, two_sided_p, upper_p
from .linalg import inv_sqrt_psd, sym_eig, symmetrize
from .spectral import effective_rank

_FMT = "%.12g"


@dataclass(frozen=True)
class MonitorConfig:
    """Rolling-window geometry, lag set, and inference settings.

    With the default 20 shifts the smallest attainable p-value is
    1/21 (about 0.048), so episodes at alpha=0.05 are detectable but at
    the resolution limit; raise ``shifts`` for finer p-values.
    """

    window: int = 252
    step: int = 21
    depth: int = 3
    lags: tuple = (1, 2, 3, 5)
    weights: Optional[tuple] = None
    ridge: float = 1e-8
    shifts: int = 20
    alpha: float = 0.05
    top_k_hubs: int = 20
    early_lags: tuple = (1, 2)
    late_lags: tuple = (3, 5)
    seed: int = 0
    hub_energy_fraction: float = 0.8
    max_hub_rank: int = 10

    def __post_init__(self):
        object.__setattr__(self, "lags", tuple(int(x) for x in self.lags))
        object.__setattr__(self, "early_lags", tuple(int(x) for x in self.early_lags))
        object.__setattr__(self, "late_lags", tuple(int(x) for x in self.late_lags))
        if self.step < 1:
            raise ConfigError("step must be >= 1")
        if not self.lags:
            raise ConfigError("lag set must be nonempty")
        if self.window <= self.depth + max(self.lags):
            raise ConfigError("window must exceed depth + max lag")
        early, late = set(self.early_lags), set(self.late_lags)
        if early & late or early | late != set(self.lags):
            raise ConfigError("early/late lags must partition the lag set")
        if self.weights is not None and len(self.weights) != len(self.lags):
            raise ConfigError("weights must match lags in length")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")

    @property
    def lag_weights(self) -> tuple:
        return self.weights or tuple(1.0 for _ in self.lags)


@dataclass
class WindowStats:
    window_index: int
    window_end_time: object
    lambda1: float
    trace: float
    eff_rank: float
    p_lambda1: float
    p_trace: float
    p_effrank: float
    lag_energy: Dict[int, float]
    tau_com: Optional[float]
    signed_dominance: Optional[float]
    hub_rank: int
    hub_scores_target: np.ndarray
    hub_scores_source: np.ndarray
    driver_matrix: np.ndarray


@dataclass
class RollingReport:
    labels: tuple
    config: MonitorConfig
    windows: List[WindowStats]
    episodes: List[Tuple[int, int]]
    turnover: np.ndarray
    null_thresholded_network: Optional[np.ndarray]
    signed_dominance_map: Optional[np.ndarray]
    macro_hub_indices: Dict[str, np.ndarray] = field(default_factory=dict)
    dominant_clusters: List[Optional[str]] = field(default_factory=list)

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    def scalar_rows(self) -> List[dict]:
        rows = []
        for w in self.windows:
            row = {
                "window_end": w.window_end_time,
                "lambda1": w.lambda1,
                "p_lambda1": w.p_lambda1,
                "trace": w.trace,
                "p_trace": w.p_trace,
                "eff_rank": w.eff_rank,
                "p_effrank": w.p_effrank,
                "tau_com": w.tau_com,
                "D": w.signed_dominance,
            }
            for lag in self.config.lags:
                row[f"E_tau_{lag}"] = w.lag_energy[lag]
            rows.append(row)
        return rows

    def write_scalars_csv(self, path) -> None:
        rows = self.scalar_rows()
        fields = list(rows[0].keys()) if rows else []
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for row in rows:
                writer.writerow([_format_cell(row[k]) for k in fields])

    def write_hub_scores_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window_end"] + list(self.labels))
            for w in self.windows:
                writer.writerow([_format_cell(w.window_end_time)]
                                + [_FMT % s for s in w.hub_scores_target])

    def write_network_csv(self, path) -> None:
        _write_matrix_csv(path, self.null_thresholded_network, self.labels)

    def write_dominance_csv(self, path) -> None:
        _write_matrix_csv(path, self.signed_dominance_map, self.labels)

    def episodes_json(self) -> dict:
        ends = [w.window_end_time for w in self.windows]
        return {
            "episodes": [
                {
                    "start_window": int(s),
                    "end_window": int(e),
                    "start_time": str(ends[s]),
                    "end_time": str(ends[e]),
                }
                for s, e in self.episodes
            ],
            "dominant_clusters": [c for c in self.dominant_clusters],
        }

    def write_episodes_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.episodes_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return _FMT % value
    return str(value)


def _write_matrix_csv(path, matrix: Optional[np.ndarray], labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + list(labels))
        if matrix is None:
            return
        for label, row in zip(labels, matrix):
            writer.writerow([label] + ["" if np.isnan(x) else _FMT % x
                                       for x in row])


def lag_center_of_mass(energy: Dict[int, float]) -> Optional[float]:
    """Energy-weighted mean lag; None when all energies vanish."""
    total = sum(energy.values())
    if total <= 0.0:
        return None
    return sum(lag * e for lag, e in energy.items()) / total


def signed_dominance(energy: Dict[int, float], early_lags: Sequence[int],
                     late_lags: Sequence[int]) -> Optional[float]:
    """(late - early) energy share in [-1, 1]; None when energy vanishes."""
    total = sum(energy.values())
    if total <= 0.0:
        return None
    late = sum(energy.get(lag, 0.0) for lag in late_lags)
    early = sum(energy.get(lag, 0.0) for lag in early_lags)
    return (late - early) / total


def driver_matrix(per_lag_a: Dict[int, np.ndarray], depth: int,
                  n_drivers: int) -> np.ndarray:
    """Squared loadings of each driver on each target, summed over lags
    and embedding positions."""
    out = None
    for lag, a in per_lag_a.items():
        a = np.asarray(a, dtype=float)
        if a.shape[1] != depth * n_drivers:
            raise DimensionError(
                f"lag {lag}: expected {depth * n_drivers} columns, got {a.shape[1]}"
            )
        contrib = (a ** 2).reshape(a.shape[0], depth, n_drivers).sum(axis=1)
        out = contrib if out is None else out + contrib
    if out is None:
        raise ConfigError("per-lag operator map is empty")
    return out


def per_lag_driver_matrices(per_lag_a: Dict[int, np.ndarray], depth: int,
                            n_drivers: int) -> Dict[int, np.ndarray]:
    return {lag: driver_matrix({lag: a}, depth, n_drivers)
            for lag, a in per_lag_a.items()}


def hub_scores(c_agg: np.ndarray, m: int, side: str = "target",
               a_per_lag: Optional[Dict[int, np.ndarray]] = None,
               depth: Optional[int] = None,
               n_drivers: Optional[int] = None,
               weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Diagonal of the rank-m eigenprojector, per driver.

    Target side: projector of C = sum w A A^T (one coordinate per target
    column). Source side: projector of sum w A^T A on the stacked driver
    lag space, folded back to drivers by summing over embedding positions.
    """
    if side not in ("target", "source"):
        raise ConfigError(f"unknown hub side {side!r}")
    if side == "target":
        c_agg = np.asarray(c_agg, dtype=float)
        if not 1 <= m <= c_agg.shape[0]:
            raise ConfigError(f"hub rank m={m} out of range for dim {c_agg.shape[0]}")
        es = sym_eig(c_agg)
        v_m = es.vectors[:, :m]
        return np.sum(v_m ** 2, axis=1)
    if a_per_lag is None or depth is None or n_drivers is None:
        raise ConfigError("source hub scores need a_per_lag, depth, n_drivers")
    lags = list(a_per_lag)
    w = list(weights) if weights is not None else [1.0] * len(lags)
    gram = None
    for lag, wt in zip(lags, w):
        a = np.asarray(a_per_lag[lag], dtype=float)
        g = wt * (a.T @ a)
        gram = g if gram is None else gram + g
    gram = symmetrize(gram)
    if not 1 <= m <= gram.shape[0]:
        raise ConfigError(f"hub rank m={m} out of range for dim {gram.shape[0]}")
    es = sym_eig(gram)
    v_m = es.vectors[:, :m]
    diag = np.sum(v_m ** 2, axis=1)
    return diag.reshape(depth, n_drivers).sum(axis=0)


def turnover(top_sets: Sequence[Set]) -> np.ndarray:
    """1 - Jaccard similarity between consecutive sets."""
    sets = [set(s) for s in top_sets]
    if not sets:
        raise ConfigError("need at least one hub set")
    out = np.zeros(max(len(sets) - 1, 0))
    for i in range(len(sets) - 1):
        union = sets[i] | sets[i + 1]
        if union:
            out[i] = 1.0 - len(sets[i] & sets[i + 1]) / len(union)
    return out


def null_threshold_network(episode_windows: Sequence[int],
                           observed: Sequence[np.ndarray],
                           replicates: Sequence[np.ndarray],
                           alpha: float) -> np.ndarray:
    """Episode-averaged driver matrix with entries masked (NaN) unless the
    observed entry exceeds the (1 - alpha) quantile of its shift-null
    replicates."""
    idx = list(episode_windows)
    if not idx:
        raise ConfigError("no episode windows supplied")
    obs_avg = np.mean([np.asarray(observed[i], dtype=float) for i in idx], axis=0)
    if alpha >= 1.0:
        return obs_avg.copy()
    rep_stack = np.stack([np.asarray(replicates[i], dtype=float) for i in idx])
    rep_avg = rep_stack.mean(axis=0)  # (B, K, K), replicate-wise episode mean
    threshold = np.quantile(rep_avg, 1.0 - alpha, axis=0)
    masked = np.where(obs_avg > threshold, obs_avg, np.nan)
    return masked


def macro_hub_indices(hub_score_series: np.ndarray, labels: Sequence[str],
                      clusters: Dict[str, str]) -> Dict[str, np.ndarray]:
    """Per-cluster sums of member target hub scores, one value per window."""
    labels = list(labels)
    unknown = [d for d in clusters if d not in labels]
    if unknown:
        raise ConfigError(f"unknown driver labels in cluster map: {unknown}")
    scores = np.asarray(hub_score_series, dtype=float)
    out: Dict[str, np.ndarray] = {}
    for driver, cluster in clusters.items():
        col = labels.index(driver)
        if cluster not in out:
            out[cluster] = np.zeros(scores.shape[0])
        out[cluster] += scores[:, col]
    return out


def _window_coherences(win: np.ndarray, cfg: MonitorConfig,
                       source: Optional[np.ndarray] = None,
                       w_v: Optional[np.ndarray] = None,
                       rows_v: Optional[np.ndarray] = None):
    """Per-lag A matrices inside one window.

    ``source`` overrides the array used for the driver lag blocks (for
    shift replicates); the target side can be passed in precomputed.
    """
    p = cfg.depth
    max_lag = max(cfg.lags)
    start = max_lag + p - 1
    if rows_v is None:
        rows_v = win[start:, :] - win[start:, :].mean(axis=0)
    n = rows_v.shape[0]
    if w_v is None:
        s_vv = symmetrize(rows_v.T @ rows_v / n) + cfg.ridge * np.eye(win.shape[1])
        w_v = inv_sqrt_psd(s_vv)
    src = win if source is None else source
    a_per_lag: Dict[int, np.ndarray] = {}
    for lag in cfg.lags:
        blocks = [src[start - lag - ell: src.shape[0] - lag - ell, :]
                  for ell in range(p)]
        rows_u = np.hstack(blocks)
        rows_u = rows_u - rows_u.mean(axis=0)
        s_uu = (symmetrize(rows_u.T @ rows_u / n)
                + cfg.ridge * np.eye(rows_u.shape[1]))
        s_vu = rows_v.T @ rows_u / n
        a_per_lag[lag] = w_v @ s_vu @ inv_sqrt_psd(s_uu)
    return a_per_lag, rows_v, w_v


def _choose_hub_rank(eigvals: np.ndarray, cfg: MonitorConfig) -> int:
    vals = np.clip(eigvals, 0.0, None)
    total = vals.sum()
    cap = min(cfg.max_hub_rank, vals.size)
    if total <= 0.0:
        return 1
    cum = np.cumsum(vals) / total
    m = int(np.searchsorted(cum, cfg.hub_energy_fraction) + 1)
    return max(1, min(m, cap))


def run_monitor(panel: TimeSeriesPanel, config: MonitorConfig,
                clusters: Optional[Dict[str, str]] = None) -> RollingReport:
    """Rolling causal-operator monitoring over the full panel."""
    values = panel.values
    t_total, k = values.shape
    if t_total < config.window:
        raise ConfigError(
            f"panel length {t_total} shorter than window {config.window}"
        )
    p = config.depth
    max_lag = max(config.lags)
    weights = config.lag_weights
    min_off = max_lag + p
    if config.window - min_off <= min_off:
        raise ConfigError("window too small for shift offsets")

    # One set of global shift offsets for the whole run: each replicate is
    # the same circular displacement of the driver series in every window,
    # so replicate-wise episode averages inherit the same across-window
    # correlation as the observed path (overlapping windows are strongly
    # dependent; per-window independent offsets would understate the null
    # spread of episode means).
    rng = np.random.default_rng([config.seed])
    offsets = rng.integers(min_off, t_total - min_off + 1,
                           size=config.shifts)

    starts = list(range(0, t_total - config.window + 1, config.step))
    windows: List[WindowStats] = []
    observed_ms: List[np.ndarray] = []
    replicate_ms: List[np.ndarray] = []
    per_lag_m_sum: Optional[Dict[int, np.ndarray]] = None
    per_lag_ms: List[Dict[int, np.ndarray]] = []
    top_sets: List[Set[int]] = []
    hub_series = np.zeros((len(starts), k))

    for w_idx, s0 in enumerate(starts):
        win_full = values[s0: s0 + config.window, :]
        col_std = win_full.std(axis=0)
        active = np.where(col_std > 0.0)[0]
        if active.size < win_full.shape[1]:
            dropped = [panel.labels[i] for i in range(k) if i not in set(active)]
            warnings.warn(
                f"window {w_idx}: dropping constant columns {dropped}",
                RuntimeWarning, stacklevel=2)
        win = win_full[:, active]
        ka = win.shape[1]

        a_per_lag, rows_v, w_v = _window_coherences(win, config)
        c_agg = None
        energy: Dict[int, float] = {}
        for lag, wt in zip(config.lags, weights):
            a = a_per_lag[lag]
            gram = wt * (a @ a.T)
            c_agg = gram if c_agg is None else c_agg + gram
            energy[lag] = float(np.sum(a ** 2))
        c_agg = symmetrize(c_agg)
        es = sym_eig(c_agg)
        lam1 = float(np.clip(es.values, 0.0, None)[0]) if es.values.size else 0.0
        tr = float(np.clip(es.values, 0.0, None).sum())
        reff = effective_rank(es.values)

        m_obs_a = driver_matrix(a_per_lag, p, ka)
        m_per_lag_a = per_lag_driver_matrices(a_per_lag, p, ka)

        # Shift replicates: displace the whole driver series by the global
        # per-replicate offset (circular over the full panel).
        rep_lam1 = np.empty(config.shifts)
        rep_tr = np.empty(config.shifts)
        rep_reff = np.empty(config.shifts)
        rep_m = np.empty((config.shifts, k, k))
        for b, off in enumerate(offsets):
            idx = (np.arange(s0, s0 + config.window) - int(off)) % t_total
            rolled = values[idx][:, active]
            a_b, _, _ = _window_coherences(win, config, source=rolled,
                                           w_v=w_v, rows_v=rows_v)
            c_b = None
            for lag, wt in zip(config.lags, weights):
                gram = wt * (a_b[lag] @ a_b[lag].T)
                c_b = gram if c_b is None else c_b + gram
            vals_b = np.clip(np.linalg.eigvalsh(symmetrize(c_b))[::-1], 0.0, None)
            rep_lam1[b] = vals_b[0] if vals_b.size else 0.0
            rep_tr[b] = vals_b.sum()
            rep_reff[b] = effective_rank(vals_b)
            m_b = driver_matrix(a_b, p, ka)
            full_b = np.zeros((k, k))
            full_b[np.ix_(active, active)] = m_b
            rep_m[b] = full_b

        p_lam1 = upper_p(lam1, rep_lam1)
        p_tr = upper_p(tr, rep_tr)
        p_reff = two_sided_p(reff, rep_reff)

        m_rank = _choose_hub_rank(es.values, config)
        scores_t_a = hub_scores(c_agg, m_rank, side="target")
        scores_s_a = hub_scores(c_agg, m_rank, side="source",
                                a_per_lag=a_per_lag, depth=p, n_drivers=ka,
                                weights=weights)
        scores_t = np.zeros(k)
        scores_t[active] = scores_t_a
        scores_s = np.zeros(k)
        scores_s[active] = scores_s_a
        m_obs = np.zeros((k, k))
        m_obs[np.ix_(active, active)] = m_obs_a
        m_per_lag_full = {}
        for lag in config.lags:
            full = np.zeros((k, k))
            full[np.ix_(active, active)] = m_per_lag_a[lag]
            m_per_lag_full[lag] = full

        top_k = min(config.top_k_hubs, k)
        top_sets.append(set(np.argsort(-scores_t, kind="stable")[:top_k]))
        hub_series[w_idx] = scores_t

        windows.append(WindowStats(
            window_index=w_idx,
            window_end_time=panel.times[s0 + config.window - 1],
            lambda1=lam1, trace=tr, eff_rank=reff,
            p_lambda1=p_lam1, p_trace=p_tr, p_effrank=p_reff,
            lag_energy=energy,
            tau_com=lag_center_of_mass(energy),
            signed_dominance=signed_dominance(energy, config.early_lags,
                                              config.late_lags),
            hub_rank=m_rank,
            hub_scores_target=scores_t,
            hub_scores_source=scores_s,
            driver_matrix=m_obs,
        ))
        observed_ms.append(m_obs)
        replicate_ms.append(rep_m)
        per_lag_ms.append(m_per_lag_full)

    episodes = detect_episodes([w.p_lambda1 for w in windows], config.alpha)
    episode_windows = [i for s, e in episodes for i in range(s, e + 1)]
    selected = episode_windows or list(range(len(windows)))

    network = (null_threshold_network(episode_windows, observed_ms,
                                      replicate_ms, config.alpha)
               if episode_windows else None)

    avg_per_lag = {lag: np.mean([per_lag_ms[i][lag] for i in selected], axis=0)
                   for lag in config.lags}
    early = sum(avg_per_lag[lag] for lag in config.early_lags)
    late = sum(avg_per_lag[lag] for lag in config.late_lags)
    total = sum(avg_per_lag[lag] for lag in config.lags)
    with np.errstate(invalid="ignore", divide="ignore"):
        dom_map = np.where(total > 0.0, (late - early) / np.where(total > 0.0, total, 1.0), 0.0)

    macro = {}
    dominant: List[Optional[str]] = [None] * len(windows)
    if clusters:
        macro = macro_hub_indices(hub_series, panel.labels, clusters)
        names = sorted(macro)
        stacked = np.vstack([macro[c] for c in names])
        for i in range(len(windows)):
            dominant[i] = names[int(np.argmax(stacked[:, i]))]

    return RollingReport(
        labels=panel.labels,
        config=config,
        windows=windows,
        episodes=episodes,
        turnover=turnover(top_sets) if top_sets else np.zeros(0),
        null_thresholded_network=network,
        signed_dominance_map=dom_map,
        macro_hub_indices=macro,
        dominant_clusters=dominant,
    )
