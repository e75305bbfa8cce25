"""One-class detector: distance to the nearest reference prototype, thresholded."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .clustering import PrototypeSet, kmeans_fit
from .signal_io import EpochSet, as_epoch_array
from .spd_core import Metric, check_spd, pairwise_distances, sample_covariance

MODEL_TYPE = "riemann_prototype_detector"


class KappaUnsetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScoreSeries:
    """Per-epoch distances ``delta_i`` with optional ground-truth labels."""

    deltas: np.ndarray
    epoch_index: np.ndarray = None
    labels: tuple = None

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=float).reshape(-1)
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("deltas must be finite and nonnegative")
        idx = (np.arange(len(d)) if self.epoch_index is None
               else np.asarray(self.epoch_index, dtype=int).reshape(-1))
        labels = (None,) * len(d) if self.labels is None else tuple(self.labels)
        if len(idx) != len(d) or len(labels) != len(d):
            raise ValueError("epoch_index and labels must align with deltas")
        object.__setattr__(self, "deltas", d)
        object.__setattr__(self, "epoch_index", idx)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.deltas)


@dataclass(frozen=True, eq=False)
class DetectorModel:
    prototypes: PrototypeSet
    kappa: float | None
    metric: Metric
    L: int
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kappa is not None and not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.L < self.prototypes.K:
            raise ValueError("L must be at least K")

    @property
    def K(self):
        return self.prototypes.K

    @property
    def n_channels(self):
        return self.prototypes.prototypes.shape[-1]

    @property
    def shrinkage(self):
        return self.training_meta.get("shrinkage")


def train(reference, K=3, metric=Metric.LOG_EUCLIDEAN, seed=0, meta=None,
          max_iter=50) -> DetectorModel:
    """Learn ``K`` prototypes from ``L = len(reference)`` reference covariances.

    ``kappa`` is left unset; see :func:`calibrate_kappa`.
    """
    metric = Metric.parse(metric)
    reference = np.asarray(reference, dtype=float)
    L = len(reference)
    if L < K:
        raise ValueError(f"need at least K={K} reference matrices, got L={L}")
    ps = kmeans_fit(reference, K, metric, seed=seed, max_iter=max_iter)
    meta = dict(meta or {})
    meta.setdefault("seed", int(seed))
    return DetectorModel(ps, None, metric, L, meta)


def score_covariances(model: DetectorModel, covs) -> np.ndarray:
    covs = np.asarray(covs, dtype=float)
    if covs.ndim == 2:
        covs = covs[None]
    if covs.shape[-1] != model.n_channels:
        raise ValueError(f"covariances are {covs.shape[-1]}x{covs.shape[-1]}, "
                         f"model expects {model.n_channels} channels")
    return np.min(pairwise_distances(covs, model.prototypes.prototypes, model.metric), axis=1)


def score(model: DetectorModel, epochs, labels=None) -> ScoreSeries:
    """Distance of every epoch's covariance to the closest prototype."""
    X = as_epoch_array(epochs)
    expected = model.training_meta.get("channels")
    if X.shape[1] != model.n_channels:
        names = f" ({', '.join(map(str, expected))})" if expected else ""
        raise ValueError(f"epochs have {X.shape[1]} channels; model expects "
                         f"{model.n_channels}{names}")
    if expected and isinstance(epochs, EpochSet) and tuple(epochs.channel_labels) != tuple(expected):
        raise ValueError(f"epoch channels {epochs.channel_labels} do not match the model's "
                         f"channel subset {tuple(expected)}")
    covs = sample_covariance(X, model.shrinkage)
    deltas = score_covariances(model, covs)
    return ScoreSeries(deltas, np.arange(len(deltas)), labels)


def classify(model: DetectorModel, s: ScoreSeries) -> np.ndarray:
    """0 where ``delta <= kappa``, 1 otherwise."""
    if model.kappa is None:
        raise KappaUnsetError("model has no kappa; calibrate it first")
    deltas = s.deltas if isinstance(s, ScoreSeries) else np.asarray(s, dtype=float)
    return (deltas > model.kappa).astype(int)


def specificity_quantile(deltas, target_specificity):
    """Threshold reaching ``target_specificity`` on the given reference deltas.

    Linear interpolation between order statistics, raised where needed to the
    smallest order statistic whose empirical specificity ``P(delta <= kappa)``
    meets the target.
    """
    d = np.sort(np.asarray(deltas, dtype=float).reshape(-1))
    n = len(d)
    q = float(np.quantile(d, target_specificity))
    rank = min(n, max(1, math.ceil(target_specificity * n - 1e-12)))
    return max(q, float(d[rank - 1]))


def calibrate_kappa(model: DetectorModel, held_out_reference, target_specificity=0.95) -> DetectorModel:
    deltas = (held_out_reference.deltas if isinstance(held_out_reference, ScoreSeries)
              else np.asarray(held_out_reference, dtype=float))
    if deltas.size == 0:
        raise ValueError("no held-out reference scores to calibrate on")
    if not 0 < target_specificity < 1:
        raise ValueError("target specificity must lie in (0, 1)")
    kappa = specificity_quantile(deltas, target_specificity)
    if kappa <= 0:
        kappa = float(np.nextafter(0.0, 1.0))
    meta = dict(model.training_meta, target_specificity=float(target_specificity))
    return replace(model, kappa=kappa, training_meta=meta)


###############################################################################
# Serialization


def model_to_dict(model: DetectorModel) -> dict:
    ps = model.prototypes
    return {
        "type": MODEL_TYPE,
        "metric": model.metric.value,
        "kappa": model.kappa,
        "K": ps.K,
        "L": model.L,
        "n_channels": model.n_channels,
        "seed": ps.seed,
        "inertia": ps.inertia,
        "training_meta": model.training_meta,
        "prototypes": [p.reshape(-1).tolist() for p in ps.prototypes],
    }


def model_from_dict(obj) -> DetectorModel:
    if obj.get("type") != MODEL_TYPE:
        raise ValueError(f"not a detector model (type={obj.get('type')!r})")
    n = int(obj["n_channels"])
    protos = np.array(obj["prototypes"], dtype=float).reshape(int(obj["K"]), n, n)
    check_spd(protos, "prototype")
    metric = Metric.parse(obj["metric"])
    ps = PrototypeSet(protos, metric, float(obj.get("inertia", 0.0)), int(obj.get("seed", 0)))
    kappa = obj.get("kappa")
    return DetectorModel(ps, None if kappa is None else float(kappa), metric,
                         int(obj["L"]), dict(obj.get("training_meta", {})))


def save_model(model: DetectorModel, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path) -> DetectorModel:
    return model_from_dict(json.loads(Path(path).read_text()))
