"""Deterministic correlation statistics on observation windows.

Covariance/correlation estimation, nearest-neighbour correlation
distances, the global and per-variable summary statistics, and rolling
correlation panels for downstream time-evolution analysis.

All operations are pure; ties in order statistics resolve toward the
lower variable index so outputs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

_SYM_TOL = 1e-12
_RANGE_TOL = 1e-9


def _default_ids(p: int) -> list[str]:
    return [f"v{i}" for i in range(p)]


@dataclass
class DataMatrix:
    """An n x p observation window: rows are timestamps, columns variables."""

    values: np.ndarray
    variable_ids: list[str] = field(default_factory=list)
    timestamps: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError("observation window must be 2-dimensional")
        n, p = self.values.shape
        if n < 2:
            raise DataError(f"need at least 2 rows, got {n}")
        if p < 2:
            raise DataError(f"need at least 2 variables, got {p}")
        if not np.all(np.isfinite(self.values)):
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"non-finite value at row {bad[0]}, column {bad[1]}")
        if not self.variable_ids:
            self.variable_ids = _default_ids(p)
        if len(self.variable_ids) != p:
            raise DataError("variable_ids length does not match column count")
        if self.timestamps is None:
            self.timestamps = np.arange(n)
        else:
            self.timestamps = np.asarray(self.timestamps)
            if len(self.timestamps) != n:
                raise DataError("timestamps length does not match row count")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_variables(self) -> int:
        return self.values.shape[1]


@dataclass
class CorrelationSnapshot:
    """A p x p sample correlation matrix with its provenance."""

    matrix: np.ndarray
    n_samples: int
    at: int = 0

    def __post_init__(self) -> None:
        r = np.asarray(self.matrix, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise DataError("correlation matrix must be square")
        if np.max(np.abs(r - r.T)) > _SYM_TOL:
            raise DataError("correlation matrix is not symmetric")
        if np.max(np.abs(np.diag(r) - 1.0)) > _RANGE_TOL:
            raise DataError("correlation matrix diagonal is not 1")
        if np.max(np.abs(r)) > 1.0 + _RANGE_TOL:
            raise DataError("correlation entries exceed [-1, 1]")
        r = (r + r.T) / 2.0
        np.fill_diagonal(r, 1.0)
        self.matrix = np.clip(r, -1.0, 1.0)

    @property
    def n_variables(self) -> int:
        return self.matrix.shape[0]


@dataclass
class RollingCorrelationPanel:
    """Per-pair rolling correlation time series over a fixed window.

    ``series`` has one row per output timestamp and one column per
    unordered variable pair; NaN marks windows where a pair's
    correlation is undefined (zero-variance sub-window).
    """

    pair_ids: list[tuple[int, int]]
    series: np.ndarray
    times: np.ndarray
    window: int

    def __post_init__(self) -> None:
        if any(i == j for i, j in self.pair_ids):
            raise DataError("pair ids must not contain self-pairs")
        if self.series.shape != (len(self.times), len(self.pair_ids)):
            raise DataError("series shape does not match times x pairs")


def pair_index(p: int) -> list[tuple[int, int]]:
    """Unordered variable pairs (i, j), i < j, in row-major order."""
    return [(i, j) for i in range(p) for j in range(i + 1, p)]


def compute_returns(prices: DataMatrix, method: str = "log") -> DataMatrix:
    """Convert a positive price panel into a returns panel (one fewer row)."""
    if method not in ("log", "simple"):
        raise ConfigError(f"unknown returns method {method!r}")
    v = prices.values
    if np.any(v <= 0.0):
        bad = np.argwhere(v <= 0.0)[0]
        raise DataError(
            f"non-positive price at row {bad[0]}, column {prices.variable_ids[bad[1]]}"
        )
    ratio = v[1:] / v[:-1]
    rets = np.log(ratio) if method == "log" else ratio - 1.0
    return DataMatrix(rets, list(prices.variable_ids), prices.timestamps[1:])


def sample_covariance(x: DataMatrix | np.ndarray) -> np.ndarray:
    """Unbiased sample covariance of the window's columns."""
    v = x.values if isinstance(x, DataMatrix) else np.asarray(x, dtype=float)
    n = v.shape[0]
    if n < 2:
        raise DataError("covariance needs at least 2 rows")
    centered = v - v.mean(axis=0)
    return centered.T @ centered / (n - 1)


def sample_correlation(
    cov: np.ndarray, n_samples: int = 0, at: int = 0
) -> CorrelationSnapshot:
    """Normalize a covariance matrix into a correlation snapshot."""
    s = np.asarray(cov, dtype=float)
    diag = np.diag(s)
    if np.any(diag <= 0.0):
        col = int(np.argmax(diag <= 0.0))
        raise DataError(f"zero-variance column {col}: correlation undefined")
    scale = 1.0 / np.sqrt(diag)
    r = s * scale[:, None] * scale[None, :]
    return CorrelationSnapshot(r, n_samples=n_samples, at=at)


def correlation_of(x: DataMatrix, at: int = 0) -> CorrelationSnapshot:
    """Sample correlation of an observation window, with provenance."""
    return sample_correlation(sample_covariance(x), n_samples=x.n_rows, at=at)


def _matrix_of(r) -> np.ndarray:
    return r.matrix if isinstance(r, CorrelationSnapshot) else np.asarray(r, dtype=float)


def knn_correlation_distance(r, i: int, k: int) -> float:
    """k-th largest |R_ij| over j != i (the k-nearest-neighbour correlation)."""
    m = _matrix_of(r)
    p = m.shape[0]
    if not 0 <= i < p:
        raise ConfigError(f"variable index {i} out of range")
    if not 1 <= k <= p - 1:
        raise ConfigError(f"neighbour rank k={k} out of range 1..{p - 1}")
    others = np.abs(np.delete(m[i], i))
    return float(np.sort(others)[::-1][k - 1])


def global_statistic(r) -> float:
    """Largest absolute off-diagonal correlation."""
    m = np.abs(_matrix_of(r)).copy()
    np.fill_diagonal(m, -np.inf)
    return float(m.max())


def local_statistics(r) -> np.ndarray:
    """Per-variable largest absolute correlation with any other variable."""
    m = np.abs(_matrix_of(r)).copy()
    np.fill_diagonal(m, -np.inf)
    return m.max(axis=1)


def rolling_correlations(x: DataMatrix, window: int) -> RollingCorrelationPanel:
    """Rolling Pearson correlations for every variable pair.

    One output row per window end (n - window + 1 rows).  Windows in
    which either variable has zero variance yield NaN for those pairs;
    downstream distance sums skip missing points pairwise.
    """
    if window < 3:
        raise ConfigError("rolling window must be at least 3")
    v = x.values
    n, p = v.shape
    if n < window:
        raise DataError(f"need at least {window} rows, got {n}")

    # Windowed sums via cumulative sums: O(n p^2) total instead of
    # recomputing each window from scratch.
    outer = np.einsum("ti,tj->tij", v, v)
    cum_outer = np.concatenate([np.zeros((1, p, p)), np.cumsum(outer, axis=0)])
    cum_sum = np.concatenate([np.zeros((1, p)), np.cumsum(v, axis=0)])

    ends = np.arange(window, n + 1)
    sums = cum_sum[ends] - cum_sum[ends - window]
    prods = cum_outer[ends] - cum_outer[ends - window]
    means = sums / window
    cov = prods / window - np.einsum("ti,tj->tij", means, means)
    var = np.einsum("tii->ti", cov)

    pairs = pair_index(p)
    ii = np.array([i for i, _ in pairs])
    jj = np.array([j for _, j in pairs])
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = np.sqrt(var[:, ii] * var[:, jj])
        series = cov[:, ii, jj] / denom
    # Flat sub-windows: variance cancels to ~0 (up to cumsum roundoff).
    scale = np.maximum(prods[:, np.arange(p), np.arange(p)] / window, 1.0)
    degenerate = var <= 1e-12 * scale
    series[degenerate[:, ii] | degenerate[:, jj]] = np.nan
    series = np.clip(series, -1.0, 1.0)

    times = np.asarray(x.timestamps)[window - 1 :]
    return RollingCorrelationPanel(pairs, series, times, window)
