"""Sequential generalized-likelihood-ratio detection on correlation snapshots.

Each incoming correlation snapshot contributes one observation of every
per-variable summary statistic and of the global statistic.  For each
series the detector scans all candidate change windows ``[l, m]``,
maximizes the window log-likelihood ratio over the dispersion parameter
(restricted away from the baseline by a minimum change magnitude), and
fires when the best window exceeds a threshold.

Stopping times:

* ``tau_local``    -- first time any per-variable statistic crosses its threshold
* ``tau_global``   -- first time the global statistic crosses its threshold
* ``tau_combined`` -- max of the two once both exist (the hub time)

The window scan is exact and O(m) per step per series via prefix sums
of the null exceedance values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rmt
from .core_stats import CorrelationSnapshot, global_statistic, local_statistics
from .errors import ConfigError, DataError, StateError


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds and band parameters of the sequential tests."""

    threshold_local: float
    threshold_global: float
    min_change_local: float = 0.1
    min_change_global: float = 0.1
    top_q: int = 1
    window_cap: int | None = None
    combine_global: bool = True  # combined time = max(local, global); else local only

    def __post_init__(self) -> None:
        for name in ("min_change_local", "min_change_global"):
            eps = getattr(self, name)
            if not 0.0 < eps < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {eps}")
        if self.threshold_local < 0.0 or self.threshold_global < 0.0:
            raise ConfigError("thresholds must be nonnegative")
        if self.top_q < 1:
            raise ConfigError("top_q must be at least 1")
        if self.window_cap is not None and self.window_cap < 1:
            raise ConfigError("window_cap must be at least 1 when set")


@dataclass(frozen=True)
class DetectionEvent:
    """One row of the detector event log."""

    time: int
    kind: str  # tauV_k | tauV | tauG | tauHB
    variable: int | None
    value: float


def dispersion_mle(
    sum_p0: float,
    count: int,
    rate: float,
    min_change: float,
    baseline: float = 1.0,
) -> float:
    """Window dispersion estimate, projected off the excluded band.

    The unconstrained maximizer of the window log-likelihood is
    ``count / (rate * sum_p0)``.  If it falls inside the excluded band
    around the baseline, the endpoint with the larger window
    log-likelihood is returned instead.  ``sum_p0 == 0`` (an observed
    correlation of exactly 1) makes the likelihood unbounded and
    returns ``inf`` as an immediate-fire sentinel.
    """
    if count < 1:
        raise ConfigError("count must be at least 1")
    if sum_p0 < 0.0:
        raise DataError("sum of exceedance values cannot be negative")
    if sum_p0 == 0.0:
        return math.inf
    j_unc = count / (rate * sum_p0)
    if abs(j_unc / baseline - 1.0) >= min_change:
        return j_unc
    lo = baseline * (1.0 - min_change)
    hi = baseline * (1.0 + min_change)

    def llr(j: float) -> float:
        return count * math.log(j / baseline) - rate * (j - baseline) * sum_p0

    return hi if llr(hi) >= llr(lo) else lo


def _scan(
    cum: np.ndarray,
    m: int,
    rate: float,
    min_change: float,
    baseline,
    window_cap: int | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best change window ending at m for each series.

    ``cum`` holds prefix sums of null-exceedance values, shape
    ``(>= m + 1, k)`` with ``cum[0] == 0``.  Returns per-series
    ``(statistic, dispersion at argmax, window start)``; the statistic
    is clamped at zero.
    """
    lo = 0 if window_cap is None else max(0, m - window_cap)
    counts = (m - np.arange(lo, m)).astype(float)[:, None]  # (L, 1)
    sums = cum[m] - cum[lo:m]  # (L, k)
    base = np.asarray(baseline, dtype=float)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        j_unc = counts / (rate * sums)
        inside = np.abs(j_unc / base - 1.0) < min_change
        j_lo = base * (1.0 - min_change)
        j_hi = base * (1.0 + min_change)
        val_lo = counts * np.log(j_lo / base) - rate * (j_lo - base) * sums
        val_hi = counts * np.log(j_hi / base) - rate * (j_hi - base) * sums
        val_unc = counts * np.log(j_unc / base) - rate * (j_unc - base) * sums

    values = np.where(inside, np.maximum(val_lo, val_hi), val_unc)
    j_sel = np.where(inside, np.where(val_hi >= val_lo, j_hi, j_lo), j_unc)
    degenerate = sums == 0.0  # observed statistic exactly 1: unbounded ratio
    values[degenerate] = np.inf
    j_sel = np.where(degenerate, np.inf, j_sel)

    best = np.argmax(values, axis=0)
    k_idx = np.arange(values.shape[1])
    stat = np.maximum(values[best, k_idx], 0.0)
    return stat, j_sel[best, k_idx], best + lo


def glr_statistic(
    p0_history,
    rate: float,
    min_change: float,
    baseline: float = 1.0,
    window_cap: int | None = None,
) -> float:
    """Change statistic for one series of null-exceedance observations."""
    hist = np.asarray(p0_history, dtype=float)
    if hist.ndim != 1 or hist.size == 0:
        raise StateError("history must be a nonempty 1-d sequence")
    cum = np.concatenate([[0.0], np.cumsum(hist)])[:, None]
    stat, _, _ = _scan(cum, hist.size, rate, min_change, baseline, window_cap)
    return float(stat[0])


def top_q_mask(values, q: int) -> np.ndarray:
    """Boolean mask of the q largest values; ties go to the lower index."""
    vals = np.asarray(values, dtype=float)
    if not 1 <= q <= vals.size:
        raise ConfigError(f"top count q={q} out of range 1..{vals.size}")
    order = np.argsort(-vals, kind="stable")
    mask = np.zeros(vals.size, dtype=bool)
    mask[order[:q]] = True
    return mask


class _Prefix:
    """Growing prefix-sum table with amortized append."""

    def __init__(self, k: int) -> None:
        self._buf = np.zeros((16, k))
        self._m = 0

    def append(self, row: np.ndarray) -> None:
        if self._m + 1 >= self._buf.shape[0]:
            grown = np.zeros((self._buf.shape[0] * 2, self._buf.shape[1]))
            grown[: self._m + 1] = self._buf[: self._m + 1]
            self._buf = grown
        self._buf[self._m + 1] = self._buf[self._m] + row
        self._m += 1

    @property
    def table(self) -> np.ndarray:
        return self._buf[: self._m + 1]


class HubDetector:
    """Single-stream sequential detector; ``step`` must be called serially."""

    def __init__(
        self,
        n_variables: int,
        n_samples: int,
        config: DetectorConfig,
        baseline_local=None,
        baseline_global: float = 1.0,
    ) -> None:
        if n_variables < 2:
            raise ConfigError("need at least 2 variables")
        rmt.DensityParams(n_samples, n_variables)  # parameter validation
        self.p = n_variables
        self.n = n_samples
        self.config = config
        self.baseline_local = (
            np.ones(n_variables)
            if baseline_local is None
            else np.asarray(baseline_local, dtype=float)
        )
        if self.baseline_local.shape != (n_variables,) or np.any(
            self.baseline_local <= 0.0
        ):
            raise ConfigError("per-variable baselines must be positive, one per variable")
        self.baseline_global = float(baseline_global)
        if self.baseline_global <= 0.0:
            raise ConfigError("global baseline must be positive")
        self._rate_local = float(rmt.local_rate(n_variables))
        self._rate_global = float(rmt.global_rate(n_variables))
        self.reset()

    def reset(self) -> None:
        """Clear all history and stopping bookkeeping (baselines are kept)."""
        self.m = 0
        self._cum_local = _Prefix(self.p)
        self._cum_global = _Prefix(1)
        self._v_local: list[np.ndarray] = []
        self._v_global: list[float] = []
        self.g_local = np.zeros(self.p)
        self.g_global = 0.0
        self.dispersion_local = np.ones(self.p)
        self.dispersion_global = 1.0
        self.tau_local_k: dict[int, int] = {}
        self.tau_local: int | None = None
        self.tau_global: int | None = None
        self.tau_combined: int | None = None
        self.g_at_combined: np.ndarray | None = None
        self.events: list[DetectionEvent] = []

    # -- calibration ------------------------------------------------------

    def calibrate(self, snapshots: list[CorrelationSnapshot]) -> None:
        """Estimate per-variable and global baseline dispersions from a
        training prefix, then start monitoring from a clean state."""
        if self.m:
            raise StateError("calibrate before the first monitored step")
        if not snapshots:
            raise DataError("calibration needs at least one snapshot")
        loc = np.array([local_statistics(s) for s in snapshots])
        glob = np.array([global_statistic(s) for s in snapshots])
        sum_loc = np.asarray(rmt.null_exceedance(loc, self.n)).reshape(loc.shape).sum(axis=0)
        sum_glob = float(np.sum(rmt.null_exceedance(glob, self.n)))
        if np.any(sum_loc == 0.0) or sum_glob == 0.0:
            raise DataError("degenerate training prefix: observed correlation of 1")
        count = len(snapshots)
        self.baseline_local = count / (self._rate_local * sum_loc)
        self.baseline_global = count / (self._rate_global * sum_glob)
        self.reset()

    # -- monitoring -------------------------------------------------------

    def step(self, snapshot: CorrelationSnapshot) -> list[DetectionEvent]:
        """Ingest one snapshot; returns newly emitted events."""
        if snapshot.n_variables != self.p:
            raise DataError(
                f"snapshot has {snapshot.n_variables} variables, expected {self.p}"
            )
        cfg = self.config
        self.m += 1
        v_loc = local_statistics(snapshot)
        v_glob = float(v_loc.max())
        p0_loc = np.asarray(rmt.null_exceedance(v_loc, self.n))
        p0_glob = float(rmt.null_exceedance(v_glob, self.n))
        self._v_local.append(v_loc)
        self._v_global.append(v_glob)
        self._cum_local.append(p0_loc)
        self._cum_global.append(np.array([p0_glob]))

        self.g_local, self.dispersion_local, _ = _scan(
            self._cum_local.table,
            self.m,
            self._rate_local,
            cfg.min_change_local,
            self.baseline_local[None, :],
            cfg.window_cap,
        )
        g_glob, j_glob, _ = _scan(
            self._cum_global.table,
            self.m,
            self._rate_global,
            cfg.min_change_global,
            self.baseline_global,
            cfg.window_cap,
        )
        self.g_global = float(g_glob[0])
        self.dispersion_global = float(j_glob[0])

        new: list[DetectionEvent] = []
        crossed = np.flatnonzero(self.g_local > cfg.threshold_local)
        for k in crossed:
            if int(k) not in self.tau_local_k:
                self.tau_local_k[int(k)] = self.m
                new.append(
                    DetectionEvent(self.m, "tauV_k", int(k), float(self.g_local[k]))
                )
        if self.tau_local is None and crossed.size:
            self.tau_local = self.m
            lead = int(crossed[np.argmax(self.g_local[crossed])])
            new.append(DetectionEvent(self.m, "tauV", lead, float(self.g_local[lead])))
        if self.tau_global is None and self.g_global > cfg.threshold_global:
            self.tau_global = self.m
            new.append(DetectionEvent(self.m, "tauG", None, self.g_global))
        if self.tau_combined is None:
            ready = (
                self.tau_local is not None
                and (self.tau_global is not None or not cfg.combine_global)
            )
            if ready:
                self.tau_combined = (
                    max(self.tau_local, self.tau_global)
                    if cfg.combine_global
                    else self.tau_local
                )
                self.g_at_combined = self.g_local.copy()
                new.append(
                    DetectionEvent(
                        self.m, "tauHB", None, float(np.max(self.g_at_combined))
                    )
                )
        self.events.extend(new)
        return new

    # -- readout ----------------------------------------------------------

    @property
    def local_values(self) -> np.ndarray:
        """Observed per-variable statistics so far, shape (m, p)."""
        if not self._v_local:
            return np.zeros((0, self.p))
        return np.vstack(self._v_local)

    @property
    def global_values(self) -> np.ndarray:
        return np.asarray(self._v_global)

    @property
    def local_p0_history(self) -> np.ndarray:
        """Null exceedance of every observed per-variable statistic, (m, p)."""
        return np.diff(self._cum_local.table[: self.m + 1], axis=0)

    @property
    def global_p0_history(self) -> np.ndarray:
        return np.diff(self._cum_global.table[: self.m + 1, 0])

    def hub_time(self) -> int:
        """Combined stopping time; raises until the required tests fire."""
        if self.tau_combined is None:
            raise StateError("combined stopping time not reached yet")
        return self.tau_combined

    def top_q_decision(self, q: int | None = None) -> np.ndarray:
        """Binary hub decision from the statistics at the combined stop."""
        if self.g_at_combined is None:
            raise StateError("no combined stopping time yet")
        return top_q_mask(self.g_at_combined, self.config.top_q if q is None else q)
