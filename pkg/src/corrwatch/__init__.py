"""Sequential change detection and hub discovery on correlation structures."""

from .core_stats import (
    CorrelationSnapshot,
    DataMatrix,
    RollingCorrelationPanel,
    compute_returns,
    correlation_of,
    global_statistic,
    knn_correlation_distance,
    local_statistics,
    rolling_correlations,
    sample_correlation,
    sample_covariance,
)
from .detector import DetectionEvent, DetectorConfig, HubDetector
from .dmd import DmdConfig, DmdModel, dd_distance, dmd_probability, te_distance
from .errors import ConfigError, CorrwatchError, DataError, StateError
from .geometry import ClusterPartition, MetricWeights, kmedoids
from .rmt import DensityParams, local_cdf, local_density, null_exceedance
from .simulate import ChangeScenario, TrialConfig, run_experiment, run_trial

__version__ = "0.1.0"
