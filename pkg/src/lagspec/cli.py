"""Command-line surface: ingestion, preprocessing, and the three workflows.

Subcommands: ``simulate`` (Monte Carlo experiments), ``test`` (one
dispersion test on a CSV panel), ``monitor`` (rolling operator
monitoring). Every run writes a machine-readable manifest with the
config hash and seed; statistical outputs are byte-identical across
reruns with the same seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .embedding import (DeformationSet, EmbeddingSpec, FeatureMap,
                        TimeSeriesPanel)
from .errors import (ConfigError, DataError, InsufficientDataError,
                     LagspecError, NumericalError)
from .inference import RandomizationPlan, randomization_test_multi, summary_from_name
from .monitor import MonitorConfig, run_monitor
from .operators import OperatorKind
from .simulation import (DgpSpec, PipelineConfig, mc_result_rows, run_mc)
from .spectral import SpectralSummary

log = logging.getLogger("lagspec")

_FMT = "%.12g"


# ---------------------------------------------------------------------------
# Ingestion and preprocessing


def ingest_csv(path) -> TimeSeriesPanel:
    """Read a CSV panel: date/integer index column, then numeric columns.

    Rows with any missing value are dropped (logged); duplicate
    timestamps are a hard error; the index is sorted ascending.
    """
    df = pd.read_csv(path)
    if df.shape[1] < 3:
        raise DataError(
            "panel CSV needs an index column plus at least 2 series columns"
        )
    index_col = df.columns[0]
    raw_index = df[index_col]
    try:
        times = pd.to_datetime(raw_index, format="ISO8601").to_numpy()
    except (ValueError, TypeError):
        try:
            times = raw_index.astype(np.int64).to_numpy()
        except (ValueError, TypeError):
            raise DataError(
                f"index column {index_col!r} is neither ISO dates nor integers"
            ) from None
    dupes = pd.Series(times).duplicated()
    if dupes.any():
        bad = pd.Series(times)[dupes].iloc[0]
        raise DataError(f"duplicate timestamp in index: {bad}")

    data = df.drop(columns=[index_col])
    for col in data.columns:
        try:
            data[col] = pd.to_numeric(data[col], errors="raise")
        except (ValueError, TypeError):
            coerced = pd.to_numeric(data[col], errors="coerce")
            bad_rows = np.where(coerced.isna() & data[col].notna())[0]
            row = int(bad_rows[0]) if bad_rows.size else -1
            raise DataError(
                f"unparseable cell in column {col!r}, data row {row}"
            ) from None

    mask = data.notna().all(axis=1).to_numpy()
    dropped = int((~mask).sum())
    if dropped:
        log.warning("dropped %d rows with missing values", dropped)
    values = data.to_numpy(dtype=float)[mask]
    times = times[mask]
    order = np.argsort(times, kind="stable")
    return TimeSeriesPanel(tuple(data.columns), times[order], values[order])


def preprocess(panel: TimeSeriesPanel, winsor_low: float = 0.005,
               winsor_high: float = 0.995,
               standardize: bool = True,
               winsorize: bool = True) -> TimeSeriesPanel:
    """Per-column winsorization at empirical quantiles, then z-scoring.

    Zero-variance columns are dropped with a warning.
    """
    if not winsor_low < winsor_high:
        raise ConfigError("winsor_low must be below winsor_high")
    if panel.n_obs < 10:
        raise InsufficientDataError("need T >= 10 for quantile preprocessing")
    values = np.array(panel.values)
    if winsorize:
        lo = np.quantile(values, winsor_low, axis=0)
        hi = np.quantile(values, winsor_high, axis=0)
        values = np.clip(values, lo, hi)
    keep: List[int] = []
    for j in range(values.shape[1]):
        sd = values[:, j].std()
        if sd == 0.0:
            log.warning("dropping zero-variance column %r", panel.labels[j])
            continue
        if standardize:
            values[:, j] = (values[:, j] - values[:, j].mean()) / sd
        keep.append(j)
    if len(keep) < 2:
        raise DataError("fewer than 2 usable columns after preprocessing")
    labels = tuple(panel.labels[j] for j in keep)
    return TimeSeriesPanel(labels, panel.times, values[:, keep])


def panel_to_csv(panel: TimeSeriesPanel, path) -> None:
    """Write a panel in the same shape ``ingest_csv`` reads."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + list(panel.labels))
        for t, row in zip(panel.times, panel.values):
            writer.writerow([str(t)] + ["%.17g" % x for x in row])


# ---------------------------------------------------------------------------
# Shared helpers


def _parse_lags(text: str) -> tuple:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(x) for x in text.split(",") if x.strip())


def _parse_feature_map(text: str) -> FeatureMap:
    if text == "identity":
        return FeatureMap.identity()
    if text.startswith("monomials:"):
        return FeatureMap.monomials(int(text.split(":", 1)[1]))
    raise ConfigError(f"unknown feature map {text!r}")


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int) -> None:
    # Paths do not affect the statistics, so they are recorded in the
    # manifest but excluded from the config hash.
    hashed = {k: v for k, v in config.items() if k not in ("out", "input")}
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(hashed),
        "seed": seed,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _write_rows_csv(path, rows: List[dict]) -> None:
    fields = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_FMT % v if isinstance(v, float) else str(v)
                             for v in (row[k] for k in fields)])


def _load_panel(args) -> TimeSeriesPanel:
    panel = ingest_csv(args.input)
    if not args.no_preprocess:
        panel = preprocess(panel, winsor_low=args.winsor_low,
                           winsor_high=args.winsor_high,
                           standardize=not args.no_standardize,
                           winsorize=not args.no_winsorize)
    return panel


def _read_clusters(path) -> Dict[str, str]:
    clusters: Dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].lower() in ("driver", "label", ""):
                continue
            if len(row) < 2:
                raise DataError(f"cluster file row needs driver,label: {row}")
            clusters[row[0]] = row[1]
    return clusters


# ---------------------------------------------------------------------------
# simulate


_TABLE1_CELLS = ((500, 20), (500, 50), (1000, 20), (1000, 50))


def _simulate_table1(args, out_dir: Path) -> None:
    cells = _TABLE1_CELLS
    if args.cell:
        parts = dict(kv.split("=") for kv in args.cell.split(","))
        cells = ((int(parts["T"]), int(parts["K"])),)
    stats_list = (SpectralSummary.trace(), SpectralSummary.frobenius(),
                  SpectralSummary.logdet())
    rows = []
    for t_len, k_dim in cells:
        dgp = DgpSpec(kind="null", T=t_len, K=k_dim, seed=args.seed)
        pipeline = PipelineConfig(shifts=args.shifts, statistics=stats_list)
        result = run_mc(dgp, pipeline, reps=args.reps, alpha=args.alpha,
                        seed=args.seed, n_jobs=args.threads)
        rows.extend(mc_result_rows(f"T={t_len},K={k_dim}", result))
    _write_rows_csv(out_dir / "results.csv", rows)


def _simulate_table2(args, out_dir: Path) -> None:
    dgp = DgpSpec(kind="nonlinear_quadratic", T=500, K=2, strength=0.15,
                  seed=args.seed)
    pipeline = PipelineConfig(
        source_map=FeatureMap.monomials(2),
        shifts=args.shifts,
        statistics=(SpectralSummary.trace(),),
        granger_order=2,
    )
    result = run_mc(dgp, pipeline, reps=args.reps, alpha=args.alpha,
                    seed=args.seed, n_jobs=args.threads)
    _write_rows_csv(out_dir / "results.csv", mc_result_rows("nonlinear", result))


def _simulate_table3(args, out_dir: Path) -> None:
    rows = []
    for theta in (0.0, 0.25):
        for conditional in (False, True):
            dgp = DgpSpec(kind="confounded", T=1000, K=2, theta_direct=theta,
                          observe_confounder=True, seed=args.seed)
            pipeline = PipelineConfig(
                shifts=args.shifts,
                statistics=(SpectralSummary.trace(),),
                condition_on_confounder=conditional,
                granger_order=None if conditional else 1,
            )
            result = run_mc(dgp, pipeline, reps=args.reps, alpha=args.alpha,
                            seed=args.seed, n_jobs=args.threads)
            label = ("conditional" if conditional else "unconditional")
            rows.extend(mc_result_rows(f"theta={theta},{label}", result))
    _write_rows_csv(out_dir / "results.csv", rows)


def _cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.preset == "table1":
        _simulate_table1(args, out_dir)
    elif args.preset == "table2":
        _simulate_table2(args, out_dir)
    elif args.preset == "table3":
        _simulate_table3(args, out_dir)
    else:
        dgp = DgpSpec(kind=args.kind, T=args.T, K=args.K, rho=args.rho,
                      tau_star=args.tau_star, strength=args.strength,
                      rank=args.rank, theta_direct=args.theta_direct,
                      seed=args.seed)
        pipeline = PipelineConfig(
            lags=_parse_lags(args.lags),
            source_depth=args.source_depth,
            target_depth=args.target_depth,
            source_map=_parse_feature_map(args.source_map),
            shifts=args.shifts,
            statistics=tuple(summary_from_name(s)
                             for s in args.summary.split(",")),
        )
        result = run_mc(dgp, pipeline, reps=args.reps, alpha=args.alpha,
                        seed=args.seed, n_jobs=args.threads)
        _write_rows_csv(out_dir / "results.csv",
                        mc_result_rows(args.kind, result))
    _write_manifest(out_dir, "simulate", _public_args(args), args.seed)
    return 0


# ---------------------------------------------------------------------------
# test


def _cmd_test(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    panel = _load_panel(args)
    source = tuple(panel.column_index(x) for x in args.source.split(","))
    target = tuple(panel.column_index(x) for x in args.target.split(","))
    conditioning = None
    if args.condition:
        conditioning = tuple(panel.column_index(x)
                             for x in args.condition.split(","))
    spec = EmbeddingSpec(
        source_indices=source,
        target_indices=target,
        source_depth=args.source_depth,
        target_depth=args.target_depth,
        source_map=_parse_feature_map(args.source_map),
        target_map=_parse_feature_map(args.target_map),
        conditioning_indices=conditioning,
    )
    deformation = DeformationSet.from_lags(_parse_lags(args.lags))
    kind = (OperatorKind.STACKED_COVARIANCE if args.operator == "stacked"
            else OperatorKind.DIRECTED_COHERENCE_GRAM)
    plan = RandomizationPlan(num_shifts=args.shifts, seed=args.seed,
                             tail=args.tail)
    statistic = summary_from_name(args.summary)
    results = randomization_test_multi(panel, spec, deformation, kind,
                                       [statistic], plan, ridge=args.ridge)
    name = statistic if isinstance(statistic, str) else statistic.name
    res = results[name]

    # Per-lag summary values on the observed panel.
    from .inference import FamilyEngine
    from .spectral import lss
    engine = FamilyEngine(panel.values, spec, deformation, kind, args.ridge)
    spectra = engine.spectra(panel.values)
    per_lag_rows = []
    for lag in deformation.lags:
        row = {"lag": lag}
        if isinstance(statistic, SpectralSummary):
            row["value"] = lss(spectra[lag], statistic)
        else:
            row["value"] = float(np.mean(spectra[lag]))
        row["lambda1"] = float(spectra[lag][0])
        per_lag_rows.append(row)
    _write_rows_csv(out_dir / "per_lag.csv", per_lag_rows)

    payload = {
        "statistic": name,
        "observed": res.observed,
        "p_value": res.p_value,
        "tail": res.tail,
        "shifts": int(res.replicates.size),
        "lags": list(deformation.lags),
        "source": args.source.split(","),
        "target": args.target.split(","),
    }
    with open(out_dir / "result.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out_dir, "test", _public_args(args), args.seed)
    print(json.dumps(payload, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# monitor


def _cmd_monitor(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    panel = _load_panel(args)
    config = MonitorConfig(
        window=args.window,
        step=args.step,
        depth=args.depth,
        lags=_parse_lags(args.lags),
        ridge=args.ridge,
        shifts=args.shifts,
        alpha=args.alpha,
        top_k_hubs=args.top_k,
        early_lags=_parse_lags(args.early_lags),
        late_lags=_parse_lags(args.late_lags),
        seed=args.seed,
    )
    clusters = _read_clusters(args.clusters) if args.clusters else None
    report = run_monitor(panel, config, clusters)
    report.write_scalars_csv(out_dir / "monitor_scalars.csv")
    report.write_hub_scores_csv(out_dir / "hub_scores.csv")
    report.write_network_csv(out_dir / "network.csv")
    report.write_dominance_csv(out_dir / "dominance.csv")
    report.write_episodes_json(out_dir / "episodes.json")
    _write_manifest(out_dir, "monitor", _public_args(args), args.seed)
    print(f"windows={report.n_windows} episodes={len(report.episodes)}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _public_args(args) -> dict:
    return {k: v for k, v in vars(args).items()
            if k not in ("func", "config") and v is not None}


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--winsor-low", type=float, default=0.005)
    p.add_argument("--winsor-high", type=float, default=0.995)
    p.add_argument("--no-winsorize", action="store_true")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--no-preprocess", action="store_true",
                   help="skip winsorization and standardization entirely")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lagspec",
        description="Lag-indexed spectral dispersion tests and rolling "
                    "causal-operator monitoring for multivariate time series.",
    )
    parser.add_argument("--config", type=str, default=None,
                        help="JSON config file; CLI flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run Monte Carlo experiments")
    sim.add_argument("--preset", choices=("table1", "table2", "table3"),
                     default=None)
    sim.add_argument("--cell", type=str, default=None,
                     help='restrict preset table1 to one cell, e.g. "T=1000,K=20"')
    sim.add_argument("--kind", type=str, default="null")
    sim.add_argument("--T", type=int, default=500)
    sim.add_argument("--K", type=int, default=20)
    sim.add_argument("--rho", type=float, default=0.3)
    sim.add_argument("--tau-star", type=int, default=2)
    sim.add_argument("--strength", type=float, default=1.0)
    sim.add_argument("--rank", type=int, default=1)
    sim.add_argument("--theta-direct", type=float, default=0.0)
    sim.add_argument("--lags", type=str, default="1..5")
    sim.add_argument("--source-depth", type=int, default=5)
    sim.add_argument("--target-depth", type=int, default=5)
    sim.add_argument("--source-map", type=str, default="identity")
    sim.add_argument("--summary", type=str, default="trace")
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--shifts", type=int, default=100)
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--out", type=str, required=True)
    sim.set_defaults(func=_cmd_simulate)

    tst = sub.add_parser("test", help="dispersion test on a CSV panel")
    tst.add_argument("--input", type=str, required=True)
    tst.add_argument("--source", type=str, required=True)
    tst.add_argument("--target", type=str, required=True)
    tst.add_argument("--condition", type=str, default=None)
    tst.add_argument("--lags", type=str, default="1..5")
    tst.add_argument("--summary", type=str, default="trace")
    tst.add_argument("--operator", choices=("coherence", "stacked"),
                     default="coherence")
    tst.add_argument("--source-depth", type=int, default=5)
    tst.add_argument("--target-depth", type=int, default=5)
    tst.add_argument("--source-map", type=str, default="identity")
    tst.add_argument("--target-map", type=str, default="identity")
    tst.add_argument("--ridge", type=float, default=1e-8)
    tst.add_argument("--shifts", type=int, default=100)
    tst.add_argument("--tail", choices=("upper", "two_sided"), default="upper")
    tst.add_argument("--seed", type=int, default=0)
    tst.add_argument("--out", type=str, required=True)
    _add_preprocess_flags(tst)
    tst.set_defaults(func=_cmd_test)

    mon = sub.add_parser("monitor", help="rolling operator monitoring")
    mon.add_argument("--input", type=str, required=True)
    mon.add_argument("--preset", choices=("paper-empirical",), default=None)
    mon.add_argument("--window", type=int, default=252)
    mon.add_argument("--step", type=int, default=21)
    mon.add_argument("--depth", type=int, default=3)
    mon.add_argument("--lags", type=str, default="1,2,3,5")
    mon.add_argument("--early-lags", type=str, default="1,2")
    mon.add_argument("--late-lags", type=str, default="3,5")
    mon.add_argument("--ridge", type=float, default=1e-8)
    mon.add_argument("--shifts", type=int, default=20)
    mon.add_argument("--alpha", type=float, default=0.05)
    mon.add_argument("--top-k", type=int, default=20)
    mon.add_argument("--clusters", type=str, default=None)
    mon.add_argument("--seed", type=int, default=0)
    mon.add_argument("--out", type=str, required=True)
    _add_preprocess_flags(mon)
    mon.set_defaults(func=_cmd_monitor)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    # Config-file defaults: flags given on the command line take precedence.
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        with open(cfg_path) as fh:
            file_config = json.load(fh)
        for p in parser._subparsers._group_actions[0].choices.values():
            known = {a.dest for a in p._actions}
            p.set_defaults(**{k: v for k, v in file_config.items()
                              if k in known})
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except LagspecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
