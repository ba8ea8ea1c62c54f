import csv
import json

import numpy as np
import pytest

from lagspec.cli import (_config_hash, _parse_feature_map, _parse_lags,
                         ingest_csv, main, panel_to_csv, preprocess)
from lagspec.embedding import TimeSeriesPanel
from lagspec.errors import (ConfigError, DataError, InsufficientDataError)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_panel_csv(path, values, start=0):
    header = ["date"] + [f"s{j}" for j in range(values.shape[1])]
    rows = [[str(start + i)] + [f"{x:.17g}" for x in row]
            for i, row in enumerate(values)]
    write_csv(path, header, rows)


class TestIngest:
    def test_integer_index_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.standard_normal((30, 3))
        path = tmp_path / "p.csv"
        write_panel_csv(path, vals)
        panel = ingest_csv(path)
        assert panel.labels == ("s0", "s1", "s2")
        assert np.allclose(panel.values, vals, atol=1e-15)

    def test_iso_dates_sorted(self, tmp_path):
        path = tmp_path / "p.csv"
        write_csv(path, ["date", "a", "b"],
                  [["2024-01-03", "3", "30"],
                   ["2024-01-01", "1", "10"],
                   ["2024-01-02", "2", "20"]])
        panel = ingest_csv(path)
        assert np.allclose(panel.values[:, 0], [1, 2, 3])

    def test_duplicate_timestamp(self, tmp_path):
        path = tmp_path / "p.csv"
        write_csv(path, ["date", "a", "b"],
                  [["2024-01-01", "1", "2"], ["2024-01-01", "3", "4"]])
        with pytest.raises(DataError, match="duplicate"):
            ingest_csv(path)

    def test_unparseable_cell_names_location(self, tmp_path):
        path = tmp_path / "p.csv"
        write_csv(path, ["date", "a", "b"],
                  [["2024-01-01", "1", "2"], ["2024-01-02", "oops", "4"]])
        with pytest.raises(DataError, match="'a'"):
            ingest_csv(path)

    def test_nan_rows_dropped(self, tmp_path):
        path = tmp_path / "p.csv"
        write_csv(path, ["t", "a", "b"],
                  [["0", "1.0", "2.0"], ["1", "", "3.0"], ["2", "4.0", "5.0"]])
        panel = ingest_csv(path)
        assert panel.n_obs == 2
        assert np.allclose(panel.values[:, 0], [1.0, 4.0])

    def test_too_few_columns(self, tmp_path):
        path = tmp_path / "p.csv"
        write_csv(path, ["t", "a"], [["0", "1.0"], ["1", "2.0"]])
        with pytest.raises(DataError):
            ingest_csv(path)

    def test_bad_index(self, tmp_path):
        path = tmp_path / "p.csv"
        write_csv(path, ["t", "a", "b"], [["first", "1", "2"], ["second", "3", "4"]])
        with pytest.raises(DataError, match="index"):
            ingest_csv(path)


class TestPreprocess:
    def make(self, values):
        values = np.asarray(values, dtype=float)
        return TimeSeriesPanel(tuple(f"c{j}" for j in range(values.shape[1])),
                               np.arange(values.shape[0]), values)

    def test_standardizes(self):
        rng = np.random.default_rng(1)
        panel = self.make(rng.standard_normal((200, 3)) * 5 + 2)
        out = preprocess(panel, winsorize=False)
        assert np.allclose(out.values.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(out.values.std(axis=0), 1.0, atol=1e-12)

    def test_winsorize_clips_outliers(self):
        rng = np.random.default_rng(2)
        vals = rng.standard_normal((500, 2))
        vals[10, 0] = 1e6
        out = preprocess(self.make(vals), standardize=False)
        assert out.values[:, 0].max() < 1e3

    def test_drops_constant_column(self):
        rng = np.random.default_rng(3)
        vals = np.column_stack([rng.standard_normal(50),
                                np.full(50, 7.0),
                                rng.standard_normal(50)])
        out = preprocess(self.make(vals))
        assert out.labels == ("c0", "c2")

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            preprocess(self.make(np.random.default_rng(0).standard_normal((5, 2))))

    def test_too_few_usable(self):
        vals = np.column_stack([np.ones(50), np.arange(50, dtype=float)])
        with pytest.raises(DataError):
            preprocess(self.make(vals))

    def test_bad_quantiles(self):
        with pytest.raises(ConfigError):
            preprocess(self.make(np.zeros((20, 2))), winsor_low=0.9,
                       winsor_high=0.1)

    def test_roundtrip_through_csv(self, tmp_path):
        rng = np.random.default_rng(4)
        panel = self.make(rng.standard_normal((60, 2)))
        out = preprocess(panel)
        path = tmp_path / "out.csv"
        panel_to_csv(out, path)
        back = ingest_csv(path)
        assert np.allclose(back.values, out.values, atol=1e-12)


class TestHelpers:
    def test_parse_lags(self):
        assert _parse_lags("1..5") == (1, 2, 3, 4, 5)
        assert _parse_lags("1,3,7") == (1, 3, 7)

    def test_parse_feature_map(self):
        assert _parse_feature_map("identity").output_dim(4) == 4
        assert _parse_feature_map("monomials:2").output_dim(3) == 6
        with pytest.raises(ConfigError):
            _parse_feature_map("fourier")

    def test_config_hash_order_invariant(self):
        h1 = _config_hash({"a": 1, "b": [2, 3]})
        h2 = _config_hash({"b": [2, 3], "a": 1})
        assert h1 == h2
        assert h1 != _config_hash({"a": 2, "b": [2, 3]})


@pytest.fixture()
def edge_csv(tmp_path):
    rng = np.random.default_rng(5)
    x = rng.standard_normal(300)
    y = 0.9 * np.concatenate([[0.0], x[:-1]]) + rng.standard_normal(300)
    z = rng.standard_normal(300)
    path = tmp_path / "panel.csv"
    write_panel_csv(path, np.column_stack([x, y, z]))
    return path


class TestMainTest:
    def test_detects_edge_and_writes_outputs(self, edge_csv, tmp_path):
        out = tmp_path / "res"
        code = main(["test", "--input", str(edge_csv), "--source", "s0",
                     "--target", "s1", "--lags", "1,2", "--source-depth", "1",
                     "--target-depth", "1", "--shifts", "99", "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "result.json").read_text())
        assert payload["p_value"] <= 0.05
        assert (out / "per_lag.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "test"
        assert len(manifest["config_hash"]) == 64

    def test_rerun_byte_identical(self, edge_csv, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(["test", "--input", str(edge_csv), "--source", "s0",
                  "--target", "s1", "--lags", "1,2", "--source-depth", "1",
                  "--target-depth", "1", "--shifts", "19", "--out", str(out)])
            outs.append(out)
        for fname in ("result.json", "per_lag.csv"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
        m0 = json.loads((outs[0] / "manifest.json").read_text())
        m1 = json.loads((outs[1] / "manifest.json").read_text())
        assert m0["config_hash"] == m1["config_hash"]

    def test_config_file_defaults(self, edge_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"lags": "1,2", "source_depth": 1,
                                   "target_depth": 1, "shifts": 19}))
        out = tmp_path / "res"
        code = main(["--config", str(cfg), "test", "--input", str(edge_csv),
                     "--source", "s0", "--target", "s1", "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "result.json").read_text())
        assert payload["lags"] == [1, 2]
        assert payload["shifts"] == 19

    def test_exit_code_config_error(self, edge_csv, tmp_path):
        code = main(["test", "--input", str(edge_csv), "--source", "s0",
                     "--target", "s1", "--summary", "unknown-summary",
                     "--out", str(tmp_path / "x")])
        assert code == 2

    def test_exit_code_data_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        write_csv(bad, ["t", "a"], [["0", "1"], ["1", "2"]])
        code = main(["test", "--input", str(bad), "--source", "a",
                     "--target", "a", "--out", str(tmp_path / "x")])
        assert code == 3


class TestMainSimulate:
    def test_custom_kind_writes_results(self, tmp_path):
        out = tmp_path / "sim"
        code = main(["simulate", "--kind", "edge_rank_one", "--T", "200",
                     "--K", "2", "--strength", "2.0", "--lags", "1,2",
                     "--source-depth", "1", "--target-depth", "1",
                     "--reps", "5", "--shifts", "19", "--out", str(out)])
        assert code == 0
        lines = (out / "results.csv").read_text().splitlines()
        assert lines[0].startswith("cell,statistic,reps")
        assert len(lines) == 2

    def test_table1_single_cell(self, tmp_path):
        out = tmp_path / "sim"
        code = main(["simulate", "--preset", "table1", "--cell", "T=500,K=20",
                     "--reps", "2", "--shifts", "19", "--out", str(out)])
        assert code == 0
        lines = (out / "results.csv").read_text().splitlines()
        # one cell, three statistics
        assert len(lines) == 4

    def test_rerun_identical_results(self, tmp_path):
        args = ["simulate", "--kind", "null", "--T", "150", "--K", "2",
                "--lags", "1,2", "--source-depth", "1", "--target-depth", "1",
                "--reps", "3", "--shifts", "19"]
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(args + ["--out", str(out)]) == 0
            outs.append(out)
        assert (outs[0] / "results.csv").read_bytes() == \
            (outs[1] / "results.csv").read_bytes()


class TestMainMonitor:
    def test_monitor_outputs(self, tmp_path):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((400, 3))
        x[:, 2] += 1.0 * np.roll(x[:, 0], 1)
        path = tmp_path / "panel.csv"
        write_panel_csv(path, x)
        clusters = tmp_path / "clusters.csv"
        clusters.write_text("driver,label\ns0,core\ns1,core\n")
        out = tmp_path / "mon"
        code = main(["monitor", "--input", str(path), "--window", "150",
                     "--step", "50", "--depth", "1", "--lags", "1,2",
                     "--early-lags", "1", "--late-lags", "2",
                     "--shifts", "30", "--clusters", str(clusters),
                     "--out", str(out)])
        assert code == 0
        for fname in ("monitor_scalars.csv", "hub_scores.csv", "network.csv",
                      "dominance.csv", "episodes.json", "manifest.json"):
            assert (out / fname).exists()
        scalars = (out / "monitor_scalars.csv").read_text().splitlines()
        expected_windows = (400 - 150) // 50 + 1
        assert len(scalars) == expected_windows + 1

    def test_monitor_window_validation(self, tmp_path):
        rng = np.random.default_rng(7)
        path = tmp_path / "panel.csv"
        write_panel_csv(path, rng.standard_normal((100, 2)))
        code = main(["monitor", "--input", str(path), "--window", "252",
                     "--out", str(tmp_path / "m")])
        assert code == 2
