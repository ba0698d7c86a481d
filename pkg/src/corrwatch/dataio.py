"""Panel ingestion, run configuration, and byte-stable report emission.

Input CSV schema: a header row with a timestamp column followed by one
column per asset; timestamps strictly increasing.  Two missing-data
policies: ``cut`` drops every row containing any missing cell, ``uncut``
forward-fills gaps (rows before an asset's first value are dropped).

All emitted files are deterministic functions of their inputs: floats
are written with shortest round-trip ``repr`` and rows in fixed order.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_stats import DataMatrix
from .detector import DetectorConfig
from .dmd import DmdConfig
from .errors import ConfigError, DataError
from .geometry import MetricWeights

SCHEMA_VERSION = 1
MISSING_TOKENS = {"", "nan", "NaN", "NA", "na", "null", "None"}
DATASET_MODES = ("cut", "uncut")
RETURNS_METHODS = ("log", "simple", "levels")


@dataclass
class IngestReport:
    """Row accounting for every transformation the loader applied."""

    rows_total: int
    rows_out: int
    rows_dropped: int
    fills_per_asset: dict[str, int]
    leading_dropped: int


@dataclass
class PricePanel:
    timestamps: list
    asset_ids: list[str]
    values: np.ndarray
    report: IngestReport

    def to_data_matrix(self) -> DataMatrix:
        return DataMatrix(
            self.values, list(self.asset_ids), np.arange(len(self.timestamps))
        )


def _parse_cell(token: str, row: int, col: str) -> float:
    text = token.strip()
    if text in MISSING_TOKENS:
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"unparseable cell at row {row}, column {col}: {token!r}"
        ) from None


def load_panel(path: str | Path, mode: str = "cut") -> PricePanel:
    """Read a timestamp+assets CSV under the chosen missing-data policy."""
    if mode not in DATASET_MODES:
        raise ConfigError(f"dataset mode must be one of {DATASET_MODES}")
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3:
            raise DataError(f"{path}: need a timestamp column and at least 2 assets")
        asset_ids = [h.strip() for h in header[1:]]
        stamps: list = []
        rows: list[list[float]] = []
        for r, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {r} has {len(rec)} cells, expected {len(header)}")
            stamps.append(rec[0].strip())
            rows.append(
                [_parse_cell(tok, r, asset_ids[i]) for i, tok in enumerate(rec[1:])]
            )
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows")

    try:
        numeric = [float(s) for s in stamps]
        keys: list = numeric
    except ValueError:
        keys = stamps
    for a, b in zip(keys, keys[1:]):
        if not b > a:
            raise DataError(f"timestamps not strictly increasing at {b!r}")

    values = np.array(rows)
    total = len(rows)
    fills = {a: 0 for a in asset_ids}
    leading = 0

    if mode == "cut":
        keep = ~np.isnan(values).any(axis=1)
        out_vals = values[keep]
        out_stamps = [s for s, k in zip(stamps, keep) if k]
        dropped = int((~keep).sum())
    else:
        filled = values.copy()
        for j, asset in enumerate(asset_ids):
            col = filled[:, j]
            last = np.nan
            for i in range(len(col)):
                if np.isnan(col[i]):
                    if not np.isnan(last):
                        col[i] = last
                        fills[asset] += 1
                else:
                    last = col[i]
        keep = ~np.isnan(filled).any(axis=1)
        leading = int(np.argmax(keep)) if keep.any() else len(keep)
        out_vals = filled[keep]
        out_stamps = [s for s, k in zip(stamps, keep) if k]
        dropped = int((~keep).sum())

    if len(out_vals) < 2:
        raise DataError(f"{path}: fewer than 2 usable rows after {mode} policy")
    report = IngestReport(
        rows_total=total,
        rows_out=len(out_vals),
        rows_dropped=dropped,
        fills_per_asset=fills,
        leading_dropped=leading,
    )
    return PricePanel(out_stamps, asset_ids, out_vals, report)


# -- run configuration ---------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Validated flat run configuration; every field has a default."""

    returns_method: str = "log"
    block_rows: int = 10
    block_stride: int | None = None  # None = non-overlapping blocks
    rolling_window: int = 20
    epsilon: float = 0.1
    epsilon_v: float = 0.1
    threshold_global: float = 10.0
    threshold_local: float = 10.0
    top_q: int = 1
    window_cap: int | None = None
    combine_global: bool = True
    calibration_blocks: int = 0
    theta1: float = 1.0
    theta2: float = 0.0
    gamma1: float = 1.0
    gamma2: float = 0.0
    scale_components: bool = False
    n_clusters: int = 5
    closeness: float = 2.0
    standardize_te: bool = True
    dmd_prior: float = 1.0
    dmd_lookback: int = 10
    dmd_mode: str = "per_timestamp"
    dmd_decay: float = 1.0
    seed: int = 0
    dataset_mode: str = "cut"
    # benchmark scenario family
    scenario_variables: int = 12
    scenario_block_rows: int | None = None  # defaults to block_rows
    scenario_hub_count: int = 3
    scenario_magnitude: float = 10.0  # dispersion magnitude mapped to a correlation
    scenario_post_correlation: float | None = None  # overrides the magnitude map
    scenario_change_block: int = 12
    scenario_horizon: int = 24
    scenario_pre_base: float = 0.0
    scenario_pre_amplitude: float = 0.0
    scenario_pre_period: float = 16.0
    trials: int = 10
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.returns_method not in RETURNS_METHODS:
            raise ConfigError(
                f"returns_method must be one of {RETURNS_METHODS}, "
                f"got {self.returns_method!r}"
            )
        if self.dataset_mode not in DATASET_MODES:
            raise ConfigError(f"dataset_mode must be one of {DATASET_MODES}")
        if self.block_rows < 5:
            raise ConfigError("block_rows must be at least 5")
        if self.block_stride is not None and self.block_stride < 1:
            raise ConfigError("block_stride must be positive when set")
        if self.rolling_window < 3:
            raise ConfigError("rolling_window must be at least 3")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        # Delegate the rest so violations carry the component's message.
        self.detector_config()
        self.metric_weights()
        self.dmd_config()

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            threshold_local=self.threshold_local,
            threshold_global=self.threshold_global,
            min_change_local=self.epsilon_v,
            min_change_global=self.epsilon,
            top_q=self.top_q,
            window_cap=self.window_cap,
            combine_global=self.combine_global,
        )

    def metric_weights(self) -> MetricWeights:
        return MetricWeights(
            self.theta1, self.theta2, self.gamma1, self.gamma2, self.scale_components
        )

    def dmd_config(self) -> DmdConfig:
        return DmdConfig(
            closeness=self.closeness,
            prior=self.dmd_prior,
            lookback=self.dmd_lookback,
            standardize_distances=self.standardize_te,
            mode=self.dmd_mode,
            decay=self.dmd_decay,
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def config_from_dict(data: dict) -> RunConfig:
    unknown = sorted(set(data) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**data)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    return config_from_dict(data)


def config_from_table_row(row: str, base: RunConfig | None = None) -> RunConfig:
    """Map the benchmark table shorthand onto a config.

    The six whitespace-separated columns are: change magnitude,
    threshold (applied to both tests), theta (the first
    change-statistic weight), gamma (the diversification weight),
    cluster count, closeness threshold.
    """
    parts = row.split()
    if len(parts) != 6:
        raise ConfigError("table row needs 6 values: magnitude threshold theta gamma K phi")
    mag, thr, theta, gamma, k, phi = (float(x) for x in parts)
    base = base or RunConfig()
    return dataclasses.replace(
        base,
        scenario_magnitude=mag,
        threshold_local=thr,
        threshold_global=thr,
        theta1=theta,
        theta2=round(1.0 - theta, 12),
        gamma2=gamma,
        gamma1=round(1.0 - gamma, 12),
        n_clusters=int(k),
        closeness=phi,
    )


# -- emission -------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def emit_table(out_dir: Path, name: str, header: list[str], rows: list[list],
               fmt: str = "csv") -> Path:
    """Write one logical table as CSV or as a JSON list of records."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out_dir / f"{name}.csv"
        write_csv(path, header, rows)
    elif fmt == "json":
        path = out_dir / f"{name}.json"
        write_json(path, [dict(zip(header, row)) for row in rows])
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
    return path


def emit_config_echo(out_dir: Path, config: RunConfig) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config_echo.json"
    write_json(path, config.as_dict())
    return path
