"""Online anomaly detection with dynamic process limits.

A rolling Gaussian model is fitted to a univariate stream; every sample is
scored two-sidedly against it and the model's inverse CDF gives the live
lower/upper limits that the score threshold corresponds to.
"""

from .detector import (
    DetectionOutput,
    Detector,
    DetectorConfig,
    ProcessLimits,
    adaptation_condition,
    new_detector,
)
from .gaussian import GaussianParams, cdf, erf_approx, ppf, standard_score
from .rolling import RunningGaussian, Sample, TimedBuffer, expire, init_stats

__all__ = [
    "DetectionOutput",
    "Detector",
    "DetectorConfig",
    "GaussianParams",
    "ProcessLimits",
    "RunningGaussian",
    "Sample",
    "TimedBuffer",
    "adaptation_condition",
    "cdf",
    "erf_approx",
    "expire",
    "init_stats",
    "new_detector",
    "ppf",
    "standard_score",
]

__version__ = "0.1.0"
