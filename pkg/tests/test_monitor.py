import numpy as np
import pytest

from lagspec.embedding import TimeSeriesPanel
from lagspec.errors import ConfigError, DimensionError
from lagspec.monitor import (MonitorConfig, driver_matrix, hub_scores,
                             lag_center_of_mass, macro_hub_indices,
                             null_threshold_network, run_monitor,
                             signed_dominance, turnover)


def make_panel(values, labels=None):
    values = np.asarray(values, dtype=float)
    labels = labels or tuple(f"s{i}" for i in range(values.shape[1]))
    return TimeSeriesPanel(tuple(labels), np.arange(values.shape[0]), values)


class TestLagProfiles:
    def test_center_of_mass_equal_energy(self):
        com = lag_center_of_mass({1: 1.0, 2: 1.0, 3: 1.0, 5: 1.0})
        assert com == pytest.approx(2.75)

    def test_center_of_mass_concentrated(self):
        assert lag_center_of_mass({1: 0.0, 5: 2.0}) == pytest.approx(5.0)

    def test_center_of_mass_weighted(self):
        assert lag_center_of_mass({1: 3.0, 5: 1.0}) == pytest.approx(2.0)

    def test_center_of_mass_zero_energy(self):
        assert lag_center_of_mass({1: 0.0, 2: 0.0}) is None

    def test_signed_dominance_extremes(self):
        assert signed_dominance({1: 1.0, 5: 0.0}, [1], [5]) == pytest.approx(-1.0)
        assert signed_dominance({1: 0.0, 5: 1.0}, [1], [5]) == pytest.approx(1.0)
        assert signed_dominance({1: 1.0, 5: 1.0}, [1], [5]) == pytest.approx(0.0)

    def test_signed_dominance_zero_energy(self):
        assert signed_dominance({1: 0.0, 5: 0.0}, [1], [5]) is None


class TestDriverMatrix:
    def test_single_entry(self):
        a = np.zeros((3, 4))
        a[2, 1] = 0.7
        m = driver_matrix({1: a}, depth=2, n_drivers=2)
        expected = np.zeros((3, 2))
        expected[2, 1] = 0.49
        assert np.allclose(m, expected)

    def test_frobenius_identity(self):
        rng = np.random.default_rng(0)
        per_lag = {lag: rng.standard_normal((4, 6)) for lag in (1, 2, 3)}
        m = driver_matrix(per_lag, depth=2, n_drivers=3)
        total_energy = sum(np.sum(a ** 2) for a in per_lag.values())
        assert m.sum() == pytest.approx(total_energy, abs=1e-8)
        # and equals the trace of the unweighted aggregate Gram
        tr = sum(np.trace(a @ a.T) for a in per_lag.values())
        assert m.sum() == pytest.approx(tr, abs=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            driver_matrix({1: np.zeros((3, 5))}, depth=2, n_drivers=3)

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        m = driver_matrix({2: rng.standard_normal((5, 10))}, depth=2,
                          n_drivers=5)
        assert np.all(m >= 0.0)


class TestHubScores:
    def test_scores_sum_to_rank(self):
        rng = np.random.default_rng(2)
        b = rng.standard_normal((6, 6))
        c = b @ b.T
        for m in (1, 3, 6):
            s = hub_scores(c, m)
            assert s.sum() == pytest.approx(m, abs=1e-8)
            assert np.all(s >= -1e-12) and np.all(s <= 1.0 + 1e-12)

    def test_rank_one_indicator(self):
        c = np.zeros((5, 5))
        c[3, 3] = 2.0
        s = hub_scores(c, 1)
        expected = np.zeros(5)
        expected[3] = 1.0
        assert np.allclose(s, expected, atol=1e-10)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        b = rng.standard_normal((5, 5))
        c = b @ b.T
        perm = rng.permutation(5)
        s = hub_scores(c, 2)
        s_perm = hub_scores(c[np.ix_(perm, perm)], 2)
        assert np.allclose(s_perm, s[perm], atol=1e-10)

    def test_source_side_requires_operators(self):
        c = np.eye(3)
        with pytest.raises(ConfigError):
            hub_scores(c, 1, side="source")
        with pytest.raises(ConfigError):
            hub_scores(c, 1, side="middle")

    def test_source_side_sums_to_rank(self):
        rng = np.random.default_rng(4)
        per_lag = {1: rng.standard_normal((4, 8)),
                   2: rng.standard_normal((4, 8))}
        s = hub_scores(np.eye(4), 3, side="source", a_per_lag=per_lag,
                       depth=2, n_drivers=4)
        assert s.sum() == pytest.approx(3.0, abs=1e-8)
        assert s.shape == (4,)


class TestTurnover:
    def test_identical_sets(self):
        assert np.allclose(turnover([{1, 2, 3}, {1, 2, 3}]), [0.0])

    def test_disjoint_sets(self):
        assert np.allclose(turnover([{1, 2}, {3, 4}]), [1.0])

    def test_partial_overlap(self):
        t = turnover([{"a", "b", "c", "d"}, {"a", "b", "c", "e"}])
        assert t[0] == pytest.approx(0.4)

    def test_single_set(self):
        assert turnover([{1}]).size == 0

    def test_empty(self):
        with pytest.raises(ConfigError):
            turnover([])


class TestNullThresholdNetwork:
    def test_alpha_one_retains_all(self):
        obs = [np.full((2, 2), 3.0)]
        reps = [np.full((5, 2, 2), 10.0)]
        net = null_threshold_network([0], obs, reps, alpha=1.0)
        assert np.allclose(net, 3.0)

    def test_masks_null_entries(self):
        rng = np.random.default_rng(5)
        obs = [np.array([[5.0, 0.1], [0.1, 0.1]])]
        reps = [np.abs(rng.standard_normal((200, 2, 2))) * 0.2]
        net = null_threshold_network([0], obs, reps, alpha=0.05)
        assert net[0, 0] == pytest.approx(5.0)
        assert np.isnan(net).sum() >= 2

    def test_observed_equal_to_replicates_masked(self):
        obs = [np.full((2, 2), 1.0)]
        reps = [np.full((10, 2, 2), 1.0)]
        net = null_threshold_network([0], obs, reps, alpha=0.05)
        assert np.all(np.isnan(net))

    def test_empty_episode(self):
        with pytest.raises(ConfigError):
            null_threshold_network([], [], [], 0.05)


class TestMacroHubIndices:
    def test_single_cluster_sums(self):
        series = np.array([[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]])
        macro = macro_hub_indices(series, ["a", "b", "c"],
                                  {"a": "fin", "b": "fin", "c": "fin"})
        assert np.allclose(macro["fin"], series.sum(axis=1))

    def test_two_clusters(self):
        series = np.array([[1.0, 2.0, 3.0]])
        macro = macro_hub_indices(series, ["a", "b", "c"],
                                  {"a": "x", "b": "y", "c": "y"})
        assert macro["x"][0] == pytest.approx(1.0)
        assert macro["y"][0] == pytest.approx(5.0)

    def test_unknown_driver(self):
        with pytest.raises(ConfigError):
            macro_hub_indices(np.zeros((1, 2)), ["a", "b"], {"z": "x"})


class TestMonitorConfig:
    def test_partition_enforced(self):
        with pytest.raises(ConfigError):
            MonitorConfig(lags=(1, 2, 3), early_lags=(1,), late_lags=(3,))
        with pytest.raises(ConfigError):
            MonitorConfig(lags=(1, 2), early_lags=(1, 2), late_lags=(2,))

    def test_window_bound(self):
        with pytest.raises(ConfigError):
            MonitorConfig(window=5, depth=3, lags=(1, 2, 3, 5))

    def test_weight_length(self):
        with pytest.raises(ConfigError):
            MonitorConfig(weights=(1.0, 1.0))


@pytest.fixture(scope="module")
def null_report():
    rng = np.random.default_rng(10)
    panel = make_panel(rng.standard_normal((400, 2)))
    cfg = MonitorConfig(window=120, step=40, depth=1, lags=(1, 2),
                        early_lags=(1,), late_lags=(2,), shifts=40,
                        seed=0)
    return panel, cfg, run_monitor(panel, cfg)


class TestRunMonitor:

    def test_window_count(self, null_report):
        panel, cfg, rep = null_report
        expected = (panel.n_obs - cfg.window) // cfg.step + 1
        assert rep.n_windows == expected
        assert rep.turnover.size == expected - 1

    def test_white_noise_not_flagged(self, null_report):
        _, _, rep = null_report
        p_vals = [w.p_lambda1 for w in rep.windows]
        assert np.median(p_vals) >= 0.2

    def test_quadratic_form_identity(self, null_report):
        # trace of each window's aggregate equals its summed lag energy
        _, cfg, rep = null_report
        for w in rep.windows:
            total = sum(wt * w.lag_energy[lag]
                        for lag, wt in zip(cfg.lags, cfg.lag_weights))
            assert w.trace == pytest.approx(total, abs=1e-8)

    def test_driver_energy_matches_trace(self, null_report):
        _, _, rep = null_report
        for w in rep.windows:
            assert w.driver_matrix.sum() == pytest.approx(
                sum(w.lag_energy.values()), abs=1e-8)

    def test_determinism(self, null_report):
        panel, cfg, rep = null_report
        rep2 = run_monitor(panel, cfg)
        for w1, w2 in zip(rep.windows, rep2.windows):
            assert w1.lambda1 == w2.lambda1
            assert w1.p_lambda1 == w2.p_lambda1

    def test_scale_invariance(self, null_report):
        # D and tau_COM come from whitened operators: rescaling columns
        # leaves them unchanged
        panel, cfg, rep = null_report
        scaled = make_panel(panel.values * np.array([3.0, 0.25]))
        rep2 = run_monitor(scaled, cfg)
        for w1, w2 in zip(rep.windows, rep2.windows):
            assert w1.tau_com == pytest.approx(w2.tau_com, abs=1e-6)
            assert w1.signed_dominance == pytest.approx(
                w2.signed_dominance, abs=1e-6)

    def test_planted_edge_detected(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((500, 4))
        x[:, 3] += 1.2 * np.roll(x[:, 0], 1)
        panel = make_panel(x, labels=("a", "b", "c", "d"))
        cfg = MonitorConfig(window=200, step=60, depth=1, lags=(1, 2),
                            early_lags=(1,), late_lags=(2,), shifts=60,
                            alpha=0.05, seed=0)
        rep = run_monitor(panel, cfg, clusters={"a": "grp", "b": "grp"})
        assert all(w.p_lambda1 < 0.05 for w in rep.windows)
        assert rep.episodes == [(0, rep.n_windows - 1)]
        net = rep.null_thresholded_network
        assert net is not None
        assert not np.isnan(net[3, 0])
        # target hub score concentrates on the driven column
        for w in rep.windows:
            assert int(np.argmax(w.hub_scores_target)) == 3
        assert "grp" in rep.macro_hub_indices
        assert all(c == "grp" for c in rep.dominant_clusters)

    def test_report_files_roundtrip(self, tmp_path, null_report):
        _, _, rep = null_report
        rep.write_scalars_csv(tmp_path / "s.csv")
        rep.write_hub_scores_csv(tmp_path / "h.csv")
        rep.write_network_csv(tmp_path / "n.csv")
        rep.write_dominance_csv(tmp_path / "d.csv")
        rep.write_episodes_json(tmp_path / "e.json")
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header.startswith("window_end,lambda1,p_lambda1")
        assert len((tmp_path / "s.csv").read_text().splitlines()) == rep.n_windows + 1

    def test_panel_shorter_than_window(self):
        panel = make_panel(np.zeros((50, 2)) + np.arange(50)[:, None])
        with pytest.raises(ConfigError):
            run_monitor(panel, MonitorConfig(window=120, depth=1, lags=(1, 2),
                                             early_lags=(1,), late_lags=(2,)))
