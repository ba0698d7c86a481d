"""Command-line pipeline: detect, cluster, dmd, benchmark, report.

Subcommands compose through files: each verb reads a config document
plus (where applicable) an input panel, and writes deterministic
CSV/JSON artifacts into the output directory.  Exit codes: 0 success,
2 configuration error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dmd as dmd_mod
from . import geometry, simulate
from .core_stats import DataMatrix, compute_returns, correlation_of, rolling_correlations
from .dataio import (
    RunConfig,
    config_from_dict,
    emit_config_echo,
    emit_table,
    load_panel,
    parse_config,
    write_json,
)
from .detector import HubDetector, top_q_mask
from .errors import ConfigError, CorrwatchError, DataError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


# -- shared pipeline pieces -----------------------------------------------------


def returns_panel(prices: DataMatrix, method: str) -> DataMatrix:
    if method == "levels":
        return prices
    return compute_returns(prices, method)


def split_blocks(panel: DataMatrix, rows: int, stride: int | None) -> list[DataMatrix]:
    step = rows if stride is None else stride
    if step != rows:
        logger.warning(
            "sliding blocks (stride %d < rows %d) violate the independence "
            "premise of the sequential tests",
            step,
            rows,
        )
    blocks = []
    start = 0
    while start + rows <= panel.n_rows:
        blocks.append(
            DataMatrix(
                panel.values[start : start + rows],
                list(panel.variable_ids),
                panel.timestamps[start : start + rows],
            )
        )
        start += step
    if not blocks:
        raise DataError(
            f"panel has {panel.n_rows} rows; too short for one {rows}-row block"
        )
    return blocks


def run_detection(panel: DataMatrix, config: RunConfig, until: int | None = None):
    """Stream the panel's blocks through the detector.

    Returns (detector, blocks, trajectory) where trajectory rows are
    (step, variable, statistic value, change statistic, dispersion).
    Stops early at ``until`` steps when given.
    """
    blocks = split_blocks(panel, config.block_rows, config.block_stride)
    detector = HubDetector(
        panel.n_variables, config.block_rows, config.detector_config()
    )
    start = 0
    if config.calibration_blocks:
        if config.calibration_blocks >= len(blocks):
            raise ConfigError("calibration_blocks consumes the whole panel")
        detector.calibrate(
            [correlation_of(b, at=i) for i, b in enumerate(blocks[: config.calibration_blocks])]
        )
        start = config.calibration_blocks
    trajectory = []
    for i in range(start, len(blocks)):
        detector.step(correlation_of(blocks[i], at=i))
        v = detector.local_values[-1]
        for k in range(detector.p):
            trajectory.append(
                [
                    detector.m,
                    panel.variable_ids[k],
                    float(v[k]),
                    float(detector.g_local[k]),
                    float(detector.dispersion_local[k]),
                ]
            )
        if until is not None and detector.m >= until:
            break
        if until is None and detector.tau_combined is not None:
            break
    return detector, blocks, trajectory


def build_dmd_model(panel: DataMatrix, config: RunConfig) -> dmd_mod.DmdModel | None:
    needed = config.rolling_window + config.dmd_lookback + 1
    if panel.n_rows < needed:
        logger.warning(
            "panel too short for the diversification model (%d < %d rows)",
            panel.n_rows,
            needed,
        )
        return None
    rc = rolling_correlations(panel, config.rolling_window)
    model = dmd_mod.DmdModel(list(panel.variable_ids), rc.pair_ids, config.dmd_config())
    for k in range(config.dmd_lookback, rc.series.shape[0]):
        dmd_mod.update_network(model, rc, k)
    return model


def _event_rows(detector: HubDetector, ids: list[str]) -> list[list]:
    rows = []
    for ev in detector.events:
        var = ids[ev.variable] if ev.variable is not None else ""
        rows.append([ev.time, ev.kind, var, ev.value])
    return rows


# -- verbs ----------------------------------------------------------------------


def cmd_detect(config: RunConfig, input_path: str, out_dir: Path, fmt: str) -> int:
    panel = load_panel(input_path, config.dataset_mode)
    rets = returns_panel(panel.to_data_matrix(), config.returns_method)
    detector, _, trajectory = run_detection(rets, config, until=10**9)
    emit_config_echo(out_dir, config)
    ids = list(rets.variable_ids)
    emit_table(out_dir, "events", ["time", "event", "variable", "value"],
               _event_rows(detector, ids), fmt)
    emit_table(
        out_dir,
        "stopping",
        ["tau_local", "tau_global", "tau_combined", "steps"],
        [[detector.tau_local, detector.tau_global, detector.tau_combined, detector.m]],
        fmt,
    )
    emit_table(
        out_dir,
        "trajectories",
        ["step", "variable", "statistic", "change_statistic", "dispersion"],
        trajectory,
        fmt,
    )
    write_json(out_dir / "ingestion.json", dataclasses.asdict(panel.report))
    print(
        f"detect: {detector.m} steps, tau_local={detector.tau_local} "
        f"tau_global={detector.tau_global} tau_combined={detector.tau_combined}"
    )
    return EXIT_OK


def cmd_cluster(config: RunConfig, input_path: str, out_dir: Path, fmt: str,
                at: int | None) -> int:
    panel = load_panel(input_path, config.dataset_mode)
    rets = returns_panel(panel.to_data_matrix(), config.returns_method)
    detector, _, _ = run_detection(rets, config, until=at)
    if detector.tau_combined is None and at is None:
        raise DataError(
            "no detection event in the panel; pass an explicit time with --at"
        )
    step = at if at is not None else detector.tau_combined
    if detector.m < 1:
        raise DataError("no monitored steps")
    g = detector.g_at_combined if at is None else detector.g_local
    model = build_dmd_model(rets, config)
    row_at = min((config.calibration_blocks + step) * config.block_rows - 1,
                 rets.n_rows - 1)
    dd_vals = (
        simulate._dmd_values_at(model, row_at, rets.n_variables)
        if model is not None
        else np.zeros(rets.n_variables)
    )
    weights = config.metric_weights()
    ids = list(rets.variable_ids)
    reference = top_q_mask(g, config.top_q)
    hub_ref = list(np.flatnonzero(reference))

    emit_config_echo(out_dir, config)
    rows = []
    for label, w in simulate.label_weights(weights).items():
        matrix = geometry.th_matrix(detector, dd_vals, w)
        part = geometry.kmedoids(matrix, config.n_clusters, config.seed)
        perf = geometry.lpm(part, hub_ref, g)
        mask, mono = geometry.geometric_decision(part, g, config.top_q)
        member = part.assignments == part.assignments[int(np.argmax(g))]
        ratio = geometry.consistency_ratio(
            [mask if mono else np.zeros_like(mask)], [member]
        )
        rows.append(
            [
                step,
                label,
                config.n_clusters,
                config.seed,
                " ".join(str(c) for c in part.assignments),
                perf,
                perf,
                perf,
                0.0,
                ratio,
            ]
        )
    emit_table(
        out_dir,
        "partitions",
        ["time", "label", "clusters", "seed", "assignments",
         "lpm", "mcp", "min", "std", "consistency"],
        rows,
        fmt,
    )
    emit_table(
        out_dir,
        "statistics_at_stop",
        ["variable", "change_statistic"],
        [[ids[k], float(g[k])] for k in range(len(ids))],
        fmt,
    )
    print(f"cluster: step {step}, reference set {hub_ref}")
    return EXIT_OK


def cmd_dmd(config: RunConfig, input_path: str, out_dir: Path, fmt: str) -> int:
    panel = load_panel(input_path, config.dataset_mode)
    rets = returns_panel(panel.to_data_matrix(), config.returns_method)
    model = build_dmd_model(rets, config)
    if model is None or not model.theta_history:
        raise DataError("panel too short for the diversification model")
    hist = np.asarray(model.theta_history)
    z = (
        dmd_mod.standardize_dmd(hist)
        if hist.shape[0] >= 2
        else np.zeros_like(hist)
    )
    rows = []
    for t in range(hist.shape[0]):
        for a, asset in enumerate(model.asset_ids):
            rows.append([model.times[t], asset, hist[t, a], z[t, a]])
    emit_config_echo(out_dir, config)
    emit_table(
        out_dir,
        "dmd_panel",
        ["timestamp", "asset_id", "theta", "theta_standardized"],
        rows,
        fmt,
    )
    print(f"dmd: {hist.shape[0]} timestamps x {hist.shape[1]} assets")
    return EXIT_OK


def scenario_from_config(config: RunConfig) -> simulate.ChangeScenario:
    p = config.scenario_variables
    n = config.scenario_block_rows or config.block_rows
    rho = config.scenario_post_correlation
    if rho is None:
        rho = simulate.dispersion_to_correlation(config.scenario_magnitude, p, n)
    return simulate.ChangeScenario(
        n_variables=p,
        n_samples=n,
        hub_set=tuple(range(config.scenario_hub_count)),
        post_correlation=rho,
        change_time=config.scenario_change_block,
        horizon=config.scenario_horizon,
        seed=config.seed,
        pre_base=config.scenario_pre_base,
        pre_amplitude=config.scenario_pre_amplitude,
        pre_period_blocks=config.scenario_pre_period,
    )


def cmd_benchmark(config: RunConfig, out_dir: Path, fmt: str) -> int:
    scenario = scenario_from_config(config)
    trial_cfg = simulate.TrialConfig(
        detector=config.detector_config(),
        weights=config.metric_weights(),
        n_clusters=config.n_clusters,
        rc_window=config.rolling_window,
        dmd=config.dmd_config(),
        cluster_seed=config.seed,
        calibration_blocks=config.calibration_blocks,
    )
    result = simulate.run_experiment(scenario, trial_cfg, config.trials, config.seed)
    emit_config_echo(out_dir, config)
    rows = [
        [
            r["label"],
            config.scenario_magnitude,
            config.threshold_local,
            config.theta1,
            config.gamma2,
            config.n_clusters,
            config.closeness,
            r["mean"],
            r["min"],
            r["std"],
            r["events"],
            r["mean_delay"],
            r["false_alarm_rate"],
        ]
        for r in result.rows
    ]
    emit_table(
        out_dir,
        "results",
        ["label", "magnitude", "threshold", "theta", "gamma", "clusters",
         "closeness", "mean", "min", "std", "events", "mean_delay",
         "false_alarm_rate"],
        rows,
        fmt,
    )
    trial_rows = [
        [
            t,
            tr.seed,
            len(tr.events),
            tr.delay if tr.delay is not None else "",
            tr.false_alarm,
            tr.hub_recovered,
            tr.lpm_mean(1),
            tr.lpm_mean(2),
            tr.lpm_mean(3),
        ]
        for t, tr in enumerate(result.trials)
    ]
    emit_table(
        out_dir,
        "trials",
        ["trial", "seed", "events", "delay", "false_alarm", "hub_recovered",
         "lpm_label1", "lpm_label2", "lpm_label3"],
        trial_rows,
        fmt,
    )
    write_json(out_dir / "verdicts.json", result.verdicts)
    for key in ("ordering_3_ge_2", "ordering_2_ge_1"):
        print(f"benchmark: {key} = {result.verdicts[key]}")
    for key in ("sign_p_3_vs_2", "sign_p_2_vs_1"):
        print(f"benchmark: {key} = {result.verdicts[key]:.4f}")
    return EXIT_OK


def cmd_report(input_dir: str, out_dir: Path) -> int:
    src = Path(input_dir)
    if not src.is_dir():
        raise DataError(f"{src} is not a results directory")
    summary: dict = {"source": src.name, "files": []}
    for path in sorted(src.iterdir()):
        if path.suffix in (".csv", ".json"):
            summary["files"].append(path.name)
    verdicts = src / "verdicts.json"
    if verdicts.exists():
        summary["verdicts"] = json.loads(verdicts.read_text())
    results = src / "results.csv"
    if results.exists():
        lines = results.read_text().strip().splitlines()
        summary["results_rows"] = len(lines) - 1
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "summary.json", summary)
    print(f"report: {len(summary['files'])} artifacts summarized")
    return EXIT_OK


# -- argument handling ------------------------------------------------------------


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path: str | None, overrides: list[str]) -> RunConfig:
    if path:
        data = parse_config(Path(path).read_text()).as_dict()
    else:
        data = RunConfig().as_dict()
    for item in overrides:
        key, value = _parse_override(item)
        data[key] = value
    return config_from_dict(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrwatch",
        description="Sequential change detection and hub discovery on "
        "correlation structures",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser, needs_input: bool) -> None:
        p.add_argument("--config", help="JSON run configuration")
        if needs_input:
            p.add_argument("--input", required=True, help="input CSV panel")
        p.add_argument(
            "--out",
            default=os.environ.get("CORRWATCH_OUT", "corrwatch_out"),
            help="output directory (default $CORRWATCH_OUT or ./corrwatch_out)",
        )
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="config override, repeatable",
        )
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    common(sub.add_parser("detect", help="run the sequential tests"), True)
    cl = sub.add_parser("cluster", help="cluster variables at a stopping time")
    common(cl, True)
    cl.add_argument("--at", type=int, help="explicit step instead of the stop time")
    common(sub.add_parser("dmd", help="diversification distribution panel"), True)
    common(sub.add_parser("benchmark", help="synthetic scenario benchmark"), False)
    rp = sub.add_parser("report", help="summarize a results directory")
    rp.add_argument("--input", required=True, help="results directory")
    rp.add_argument(
        "--out", default=os.environ.get("CORRWATCH_OUT", "corrwatch_out")
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "report":
            return cmd_report(args.input, Path(args.out))
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        config = load_config(args.config, overrides)
        out_dir = Path(args.out)
        if args.verb == "detect":
            return cmd_detect(config, args.input, out_dir, args.format)
        if args.verb == "cluster":
            return cmd_cluster(config, args.input, out_dir, args.format, args.at)
        if args.verb == "dmd":
            return cmd_dmd(config, args.input, out_dir, args.format)
        if args.verb == "benchmark":
            return cmd_benchmark(config, out_dir, args.format)
        raise ConfigError(f"unknown verb {args.verb!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CorrwatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
