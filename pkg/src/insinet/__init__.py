"""Change detection for bitemporal open-pit mining imagery with neighborhood
and multi-scale context."""

from .data import BiTemporalSample, DatasetManifest
from .estimator import INSINetChangeDetector, ScaleDegrader, SceneTiler
from .exceptions import INSINetError
from .metrics import ConfusionCounts, MetricReport, confusion, metrics
from .nn.model import Components, INSINet, NetworkConfig
from .training import Checkpoint, TrainConfig, predict, train

__version__ = "0.1.0"

__all__ = [
    "BiTemporalSample", "DatasetManifest", "INSINetChangeDetector", "ScaleDegrader", "SceneTiler",
    "INSINetError", "ConfusionCounts", "MetricReport", "confusion", "metrics", "Components",
    "INSINet", "NetworkConfig", "Checkpoint", "TrainConfig", "predict", "train",
]
