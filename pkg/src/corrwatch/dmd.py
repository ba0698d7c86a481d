"""Diversification measure distribution over a composite correlation network.

At each timestamp, variable pairs whose rolling-correlation series have
evolved similarly (small Euclidean distance over a lookback, optionally
z-scored across pairs so the closeness threshold is scale-free) are
linked.  Every qualifying link between two pairs increments the two pair
accumulators and, for each of the four asset slots of the two pairs, the
corresponding asset accumulator (an asset shared by both pairs counts
twice).  Normalizing the asset accumulators with a Dirichlet prior mass
gives a per-asset probability distribution: a high mass means the
asset's correlations co-evolve with many others (a crowded, poorly
diversified position).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_stats import RollingCorrelationPanel
from .errors import ConfigError, DataError

MODES = ("per_timestamp", "trailing")


@dataclass(frozen=True)
class DmdConfig:
    """Closeness threshold, prior mass, and accumulation policy."""

    closeness: float = 2.0  # threshold on (optionally z-scored) pair distances
    prior: float = 1.0  # symmetric Dirichlet mass per asset
    lookback: int = 10  # distance window: lookback + 1 rolling-correlation points
    standardize_distances: bool = True
    mode: str = "per_timestamp"
    decay: float = 1.0  # trailing mode: 1.0 keeps all history

    def __post_init__(self) -> None:
        if self.prior <= 0.0:
            raise ConfigError("prior mass must be positive")
        if self.lookback < 1:
            raise ConfigError("lookback must be at least 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigError("decay must lie in [0, 1]")


def te_distance(rc_i, rc_j, k: int | None = None, lookback: int | None = None) -> float:
    """Euclidean distance between two rolling-correlation series.

    With ``k`` and ``lookback`` given, the window is the ``lookback + 1``
    points ending at index ``k``; otherwise the full series.  Missing
    points (NaN in either series) are skipped pairwise and the sum of
    squares is rescaled by nominal/valid counts.  Returns NaN when fewer
    than 2 common valid points remain (the pair is excluded upstream).
    """
    a = np.asarray(rc_i, dtype=float)
    b = np.asarray(rc_j, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("series must be 1-d and equally long")
    if k is not None:
        w = lookback if lookback is not None else k
        if k - w < 0 or k >= a.size:
            raise DataError("window [k-lookback, k] out of series range")
        a = a[k - w : k + 1]
        b = b[k - w : k + 1]
    valid = np.isfinite(a) & np.isfinite(b)
    n_valid = int(valid.sum())
    if n_valid < 2:
        return math.nan
    total = float(np.sum((a[valid] - b[valid]) ** 2))
    return math.sqrt(total * (a.size / n_valid))


def pair_distance_matrix(segment: np.ndarray) -> np.ndarray:
    """All-pairs ``te_distance`` between the columns of a window segment.

    ``segment`` is (points, n_series) with NaN marking missing values;
    the result is a symmetric (n_series, n_series) matrix with NaN where
    fewer than 2 common valid points exist and 0 on the diagonal.
    """
    w, _ = segment.shape
    mask = np.isfinite(segment).astype(float)
    x = np.where(np.isfinite(segment), segment, 0.0)
    sq = x * x
    common = mask.T @ mask
    cross = x.T @ x
    ssum = sq.T @ mask + mask.T @ sq - 2.0 * cross
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.sqrt(np.maximum(ssum, 0.0) * (w / common))
    dist[common < 2] = np.nan
    np.fill_diagonal(dist, 0.0)
    return dist


def standardize_distances(dist: np.ndarray) -> np.ndarray:
    """Z-score the finite off-diagonal distances of a symmetric matrix."""
    out = dist.copy()
    off = ~np.eye(dist.shape[0], dtype=bool)
    vals = dist[off]
    finite = vals[np.isfinite(vals)]
    if finite.size == 0:
        return out
    mean = float(finite.mean())
    std = float(finite.std())
    if std == 0.0:
        out[off] = np.where(np.isfinite(vals), 0.0, np.nan)
    else:
        out[off] = (vals - mean) / std
    return out


@dataclass
class DmdModel:
    """Accumulators and per-timestamp history of the asset distribution."""

    asset_ids: list[str]
    pair_ids: list[tuple[int, int]]
    config: DmdConfig = field(default_factory=DmdConfig)

    def __post_init__(self) -> None:
        if len(self.pair_ids) < 2:
            raise ConfigError("need at least 2 variable pairs")
        n_assets = len(self.asset_ids)
        if any(not (0 <= i < n_assets and 0 <= j < n_assets) or i == j
               for i, j in self.pair_ids):
            raise ConfigError("pair ids must reference distinct known assets")
        self.rc_counts = np.zeros(len(self.pair_ids))
        self.asset_counts = np.zeros(n_assets)
        self._incidence = np.zeros((n_assets, len(self.pair_ids)))
        for col, (i, j) in enumerate(self.pair_ids):
            self._incidence[i, col] = 1.0
            self._incidence[j, col] = 1.0
        self.theta_history: list[np.ndarray] = []
        self.times: list = []
        self.event_counts: list[int] = []

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)

    def asset_index(self, asset) -> int:
        if isinstance(asset, str):
            try:
                return self.asset_ids.index(asset)
            except ValueError:
                raise ConfigError(f"unknown asset id {asset!r}") from None
        idx = int(asset)
        if not 0 <= idx < self.n_assets:
            raise ConfigError(f"unknown asset index {asset}")
        return idx


def update_network(model: DmdModel, panel: RollingCorrelationPanel, k: int) -> DmdModel:
    """Count Φ-close pair links at panel row ``k`` and record the distribution.

    Each qualifying unordered link between pairs (k1, k2) adds 1 to both
    pair accumulators and 1 per asset occurrence among the four slots of
    the two pairs (a shared asset receives 2).
    """
    cfg = model.config
    if panel.pair_ids != model.pair_ids:
        raise DataError("panel pairs do not match the model")
    if not cfg.lookback <= k < panel.series.shape[0]:
        raise DataError(f"timestamp index {k} outside usable panel range")

    segment = panel.series[k - cfg.lookback : k + 1]
    dist = pair_distance_matrix(segment)
    if cfg.standardize_distances:
        dist = standardize_distances(dist)
    qualify = np.zeros_like(dist, dtype=bool)
    finite = np.isfinite(dist)
    qualify[finite] = dist[finite] <= cfg.closeness
    np.fill_diagonal(qualify, False)

    degree = qualify.sum(axis=1).astype(float)
    asset_inc = model._incidence @ degree

    if cfg.mode == "per_timestamp":
        model.rc_counts = degree
        model.asset_counts = asset_inc
    else:
        model.rc_counts = cfg.decay * model.rc_counts + degree
        model.asset_counts = cfg.decay * model.asset_counts + asset_inc

    model.event_counts.append(int(qualify.sum()) // 2)
    model.theta_history.append(dmd_probability(model))
    model.times.append(panel.times[k])
    return model


def dmd_probability(model: DmdModel) -> np.ndarray:
    """Posterior-mean asset masses: (counts + prior) normalized to sum 1."""
    loaded = model.asset_counts + model.config.prior
    return loaded / loaded.sum()


def standardize_dmd(theta_history) -> np.ndarray:
    """Z-score each asset's mass series across timestamps.

    Assets whose mass never varies map to zero everywhere.
    """
    hist = np.asarray(theta_history, dtype=float)
    if hist.ndim != 2 or hist.shape[0] < 2:
        raise DataError("need at least 2 timestamps to standardize")
    mean = hist.mean(axis=0)
    std = hist.std(axis=0)
    out = np.zeros_like(hist)
    live = std > 0.0
    out[:, live] = (hist[:, live] - mean[live]) / std[live]
    return out


def dd_distance(model: DmdModel, asset_i, asset_j, at: int = -1,
                standardized: bool = True) -> float:
    """Signed difference of the two assets' masses at one timestamp.

    Antisymmetric; the clustering layer consumes the absolute value.
    ``standardized`` (default) works on the per-asset z-scored history.
    """
    i = model.asset_index(asset_i)
    j = model.asset_index(asset_j)
    if not model.theta_history:
        raise DataError("model has no recorded distribution yet")
    if standardized:
        panel = standardize_dmd(model.theta_history)
        row = panel[at]
    else:
        row = model.theta_history[at]
    return float(row[i] - row[j])
