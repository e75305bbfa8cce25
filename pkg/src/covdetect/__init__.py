"""One-class detection of altered states from covariance matrices of multichannel signals."""

from .spd_core import Metric, distance, exp_map, log_map, mean, sample_covariance
from .clustering import PrototypeSet, assign, kmeans_fit
from .detector import DetectorModel, ScoreSeries, calibrate_kappa, classify, score, train
from .evaluation import DetectorConfig, RocCurve, SweepResult, kfold_auc, roc_auc

__version__ = "0.1.0"

__all__ = [
    "Metric", "distance", "exp_map", "log_map", "mean", "sample_covariance",
    "PrototypeSet", "assign", "kmeans_fit",
    "DetectorModel", "ScoreSeries", "calibrate_kappa", "classify", "score", "train",
    "DetectorConfig", "RocCurve", "SweepResult", "kfold_auc", "roc_auc",
]
