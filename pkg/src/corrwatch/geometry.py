"""Composite distance metrics, k-medoids clustering, and test metrics.

Three nested distance families over the monitored variables:

1. the change-statistic distance |G_i - G_j|,
2. its convex mix with a normalized density-peak difference, and
3. the full mix that adds the absolute diversification-mass difference.

Clusters from these matrices drive the geometric hub decision: pick the
cluster containing all top-q change statistics (or the top-1 statistic's
cluster when the top-q set spans clusters), then score how many true
hubs that cluster captured.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import rmt
from .detector import HubDetector, top_q_mask
from .errors import ConfigError, DataError, StateError

logger = logging.getLogger(__name__)

_WEIGHT_TOL = 1e-9
_DISPERSION_CAP = 1e12  # keeps the immediate-fire sentinel finite in distances


@dataclass(frozen=True)
class MetricWeights:
    """Mixing weights of the composite distances.

    Each pair must sum to 1.  The additional cross-family constraint
    theta1 + theta2 == gamma1 is reported when violated but not
    enforced: it would force the diversification term to zero.
    """

    theta1: float = 1.0
    theta2: float = 0.0
    gamma1: float = 1.0
    gamma2: float = 0.0
    scale_components: bool = False  # min-max scale each component before mixing

    def __post_init__(self) -> None:
        for name in ("theta1", "theta2", "gamma1", "gamma2"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative")
        if abs(self.theta1 + self.theta2 - 1.0) > _WEIGHT_TOL:
            raise ConfigError(
                f"theta1 + theta2 must equal 1, got {self.theta1 + self.theta2}"
            )
        if abs(self.gamma1 + self.gamma2 - 1.0) > _WEIGHT_TOL:
            raise ConfigError(
                f"gamma1 + gamma2 must equal 1, got {self.gamma1 + self.gamma2}"
            )
        if abs(self.theta1 + self.theta2 - self.gamma1) > _WEIGHT_TOL:
            logger.info(
                "cross-family weight constraint theta1+theta2 == gamma1 "
                "not satisfied (gamma1=%s); proceeding as configured",
                self.gamma1,
            )


@dataclass
class ClusterPartition:
    """A k-medoids partition: assignments index into ``medoids``."""

    assignments: np.ndarray
    medoids: np.ndarray
    cost: float

    @property
    def n_clusters(self) -> int:
        return len(self.medoids)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)


def _abs_diff_matrix(values: np.ndarray) -> np.ndarray:
    return np.abs(values[:, None] - values[None, :])


def _minmax(matrix: np.ndarray) -> np.ndarray:
    off = ~np.eye(matrix.shape[0], dtype=bool)
    lo = matrix[off].min()
    hi = matrix[off].max()
    if hi - lo <= 0.0:
        return np.zeros_like(matrix)
    out = (matrix - lo) / (hi - lo)
    np.fill_diagonal(out, 0.0)
    return out


def qhd_distance(i: int, j: int, g_values) -> float:
    """Absolute difference of two variables' change statistics."""
    g = np.asarray(g_values, dtype=float)
    return float(abs(g[i] - g[j]))


def qhd_matrix(g_values) -> np.ndarray:
    return _abs_diff_matrix(np.asarray(g_values, dtype=float))


def density_peaks(detector: HubDetector) -> tuple[np.ndarray, float]:
    """Peak observed density per variable, and the global-family peak.

    For each variable, the per-variable density with its current
    dispersion estimate is evaluated at every observed statistic and the
    maximum taken; likewise for the global series under the global
    family.  Infinite dispersion sentinels are capped so distances stay
    finite.
    """
    if detector.m == 0:
        raise StateError("detector has no observations")
    n = detector.n
    expo = (n - 4) / 2.0
    norm = 2.0 / rmt.beta_constant(n)

    v_loc = detector.local_values  # (m, p)
    p0_loc = detector.local_p0_history
    disp_loc = np.minimum(detector.dispersion_local, _DISPERSION_CAP)
    rate_l = rmt.local_rate(detector.p)
    dens = (
        norm
        * rate_l
        * disp_loc[None, :]
        * (1.0 - v_loc**2) ** expo
        * np.exp(-rate_l * disp_loc[None, :] * p0_loc)
    )
    peaks = dens.max(axis=0)

    v_glob = detector.global_values
    p0_glob = detector.global_p0_history
    disp_g = min(detector.dispersion_global, _DISPERSION_CAP)
    rate_g = rmt.global_rate(detector.p)
    dens_g = (
        norm * rate_g * disp_g * (1.0 - v_glob**2) ** expo
        * np.exp(-rate_g * disp_g * p0_glob)
    )
    return peaks, float(dens_g.max())


def qcd_qhd_matrix(detector: HubDetector, weights: MetricWeights) -> np.ndarray:
    """Mix of the change-statistic distance and the density-peak distance."""
    base = qhd_matrix(detector.g_local)
    if weights.theta2 == 0.0:
        return weights.theta1 * base
    peaks, global_peak = density_peaks(detector)
    if global_peak <= 0.0 or not math.isfinite(global_peak):
        logger.warning(
            "global density peak is zero; falling back to the "
            "change-statistic term only"
        )
        ratio = np.zeros_like(base)
    else:
        ratio = _abs_diff_matrix(peaks) / global_peak
    if weights.scale_components:
        base = _minmax(base)
        ratio = _minmax(ratio)
    return weights.theta1 * base + weights.theta2 * ratio


def qcd_qhd_distance(i: int, j: int, detector: HubDetector,
                     weights: MetricWeights) -> float:
    return float(qcd_qhd_matrix(detector, weights)[i, j])


def th_matrix(detector: HubDetector, dd_values, weights: MetricWeights) -> np.ndarray:
    """Full composite: the mixed distance plus the diversification term.

    ``dd_values`` is the per-asset (standardized) diversification mass
    at the evaluation time; its absolute pairwise differences form the
    second component.
    """
    mixed = qcd_qhd_matrix(detector, weights)
    if weights.gamma2 == 0.0:
        return weights.gamma1 * mixed
    dd = _abs_diff_matrix(np.asarray(dd_values, dtype=float))
    if dd.shape != mixed.shape:
        raise DataError("diversification values do not match variable count")
    if weights.scale_components:
        dd = _minmax(dd)
    return weights.gamma1 * mixed + weights.gamma2 * dd


def th_distance(i: int, j: int, detector: HubDetector, dd_values,
                weights: MetricWeights) -> float:
    return float(th_matrix(detector, dd_values, weights)[i, j])


# -- clustering -------------------------------------------------------------


def _check_distance_matrix(d: np.ndarray) -> None:
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DataError("distance matrix must be square")
    if not np.all(np.isfinite(d)):
        raise DataError("distance matrix has non-finite entries")
    if np.max(np.abs(d - d.T)) > 1e-9:
        raise DataError("distance matrix must be symmetric")
    if np.any(np.diag(d) > 1e-9) or np.any(d < -1e-12):
        raise DataError("distances must be nonnegative with zero diagonal")


def _farthest_first(d: np.ndarray, k: int, start: int) -> list[int]:
    chosen = [start]
    min_dist = d[start].copy()
    for _ in range(k - 1):
        min_dist[chosen] = -np.inf
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, d[nxt])
    return chosen


def _assignment_cost(d: np.ndarray, medoids: np.ndarray) -> tuple[np.ndarray, float]:
    sub = d[:, medoids]
    assign = np.argmin(sub, axis=1)  # ties resolve to the earlier medoid
    cost = float(sub[np.arange(d.shape[0]), assign].sum())
    return assign, cost


def _pam(d: np.ndarray, medoids: list[int]) -> tuple[np.ndarray, np.ndarray, float]:
    meds = np.array(sorted(medoids))
    assign, cost = _assignment_cost(d, meds)
    p = d.shape[0]
    improved = True
    while improved:
        improved = False
        best = (cost, None, None)
        in_meds = np.zeros(p, dtype=bool)
        in_meds[meds] = True
        for mi in range(len(meds)):
            for h in range(p):
                if in_meds[h]:
                    continue
                trial = meds.copy()
                trial[mi] = h
                _, c = _assignment_cost(d, np.sort(trial))
                if c < best[0] - 1e-12:
                    best = (c, mi, h)
        if best[1] is not None:
            meds[best[1]] = best[2]
            meds = np.sort(meds)
            assign, cost = _assignment_cost(d, meds)
            improved = True
    return meds, assign, cost


def kmedoids(distances, n_clusters: int, seed: int = 0,
             restarts: int | None = None) -> ClusterPartition:
    """Deterministic PAM clustering of a distance matrix.

    Greedy farthest-point initialization from seed-chosen starting
    points, followed by best-improvement swap descent; several restarts
    (deterministic under the seed) guard against poor local optima and
    the lowest-cost result wins, with ties broken by medoid indices.
    """
    d = np.asarray(distances, dtype=float)
    _check_distance_matrix(d)
    p = d.shape[0]
    if not 1 <= n_clusters <= p:
        raise ConfigError(f"cluster count {n_clusters} out of range 1..{p}")
    if n_clusters == p:
        idx = np.arange(p)
        return ClusterPartition(idx.copy(), idx.copy(), 0.0)

    if restarts is None:
        restarts = min(p, 10)
    rng = np.random.default_rng(seed)
    starts = rng.permutation(p)[:restarts]

    best: tuple[float, tuple, np.ndarray, np.ndarray] | None = None
    for start in starts:
        meds, assign, cost = _pam(d, _farthest_first(d, n_clusters, int(start)))
        key = (cost, tuple(meds))
        if best is None or key < (best[0], best[1]):
            best = (cost, tuple(meds), meds, assign)
    return ClusterPartition(best[3], best[2], best[0])


# -- decisions and evaluation -------------------------------------------------


def geometric_decision(partition: ClusterPartition, g_values, q: int
                       ) -> tuple[np.ndarray, bool]:
    """Cluster-based hub decision.

    If all top-q statistics share one cluster, select that whole
    cluster; otherwise fall back to the top-1 statistic's cluster.  The
    second return value reports whether the top-q set was mono-cluster.
    """
    g = np.asarray(g_values, dtype=float)
    if g.size != partition.assignments.size:
        raise DataError("statistic vector does not match partition size")
    top = top_q_mask(g, q)
    top_clusters = np.unique(partition.assignments[top])
    if top_clusters.size == 1:
        return partition.assignments == top_clusters[0], True
    top1 = int(np.argmax(g))
    return partition.assignments == partition.assignments[top1], False


def lpm(partition: ClusterPartition, hub_set, g_values) -> float:
    """Fraction of true hubs captured by the top-1 statistic's cluster."""
    hubs = list(hub_set)
    if not hubs:
        raise ConfigError("hub set must be nonempty")
    g = np.asarray(g_values, dtype=float)
    top1 = int(np.argmax(g))
    cluster = partition.assignments[top1]
    captured = sum(1 for h in hubs if partition.assignments[h] == cluster)
    return captured / len(hubs)


@dataclass(frozen=True)
class McpSummary:
    mean: float
    minimum: float
    std: float
    count: int


def mcp(lpm_values) -> McpSummary:
    """Mean/min/std of per-event clustering performance."""
    vals = np.asarray(list(lpm_values), dtype=float)
    if vals.size == 0:
        raise StateError("no detection events to aggregate")
    return McpSummary(
        float(vals.mean()), float(vals.min()), float(vals.std()), int(vals.size)
    )


def consistency_ratio(strict_masks, membership_masks) -> float:
    """Ratio of strict-decision mass to top-1 cluster-membership mass.

    Both arguments are per-event boolean vectors over variables: the
    strict rule selects a cluster only when the top-q set is
    mono-cluster (all-false otherwise), while membership always marks
    the top-1 statistic's cluster.  Approaches 1 as changes grow strong
    enough that the top-q statistics always land in one cluster.
    """
    num = float(sum(np.asarray(m).sum() for m in strict_masks))
    den = float(sum(np.asarray(m).sum() for m in membership_masks))
    if den == 0.0:
        raise StateError("no detection events: consistency undefined")
    return num / den
