"""Sequence detection over Poisson channels with model-based and neural detectors."""

from .channel import ChannelParams, TimeVaryingConfig, discretize_response, simulate, simulate_time_varying
from .detectors import SlidingBRNN, detect_sbrnn
from .features import FeatureConfig, build_features
from .viterbi import TrellisConfig, viterbi_decode

__all__ = [
    "ChannelParams",
    "FeatureConfig",
    "SlidingBRNN",
    "TimeVaryingConfig",
    "TrellisConfig",
    "build_features",
    "detect_sbrnn",
    "discretize_response",
    "simulate",
    "simulate_time_varying",
    "viterbi_decode",
]
__version__ = "0.1.0"
