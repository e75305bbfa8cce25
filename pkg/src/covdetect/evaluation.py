"""ROC/AUC, learning-period cross validation and parameter sweeps."""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from . import baselines
from .detector import score_covariances, train
from .signal_io import EpochSet, FilterSpec, Recording, as_epoch_array, bandpass_filter, downsample, epoch_windows
from .spd_core import Metric, default_shrinkage, raw_covariance, shrink

###############################################################################
# ROC


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    n_pos: int
    n_neg: int

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_auc(scores0, scores1) -> RocCurve:
    """ROC of ``scores1`` (positives) against ``scores0`` (negatives).

    Thresholds sweep the distinct score values from high to low; tied
    scores move FPR and TPR together, giving a diagonal segment. The
    trapezoidal area then equals ``P(s1 > s0) + P(s1 == s0) / 2``.
    """
    s0 = np.asarray(scores0, dtype=float).reshape(-1)
    s1 = np.asarray(scores1, dtype=float).reshape(-1)
    if s0.size == 0 or s1.size == 0:
        raise ValueError("both classes need at least one score")
    thresholds = np.unique(np.concatenate([s0, s1]))[::-1]
    # counts of scores >= each threshold
    neg = np.sort(s0)
    pos = np.sort(s1)
    fp = s0.size - np.searchsorted(neg, thresholds, side="left")
    tp = s1.size - np.searchsorted(pos, thresholds, side="left")
    fp = np.concatenate([[0], fp])
    tp = np.concatenate([[0], tp])
    # trapezoids on integer counts, normalized once: exact up to the final division
    auc = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1]))) / (2 * s0.size * s1.size)
    fpr, tpr = fp / s0.size, tp / s1.size
    return RocCurve(fpr, tpr, np.concatenate([[np.inf], thresholds]), auc, s1.size, s0.size)


def auc_score(scores0, scores1):
    return roc_auc(scores0, scores1).auc


###############################################################################
# Features and folds


@dataclass(frozen=True, eq=False)
class CovStack:
    """Unshrunk epoch covariances plus the window length they came from.

    Restricting to a channel subset is a sub-block of each matrix, so channel
    selection never recomputes covariances.
    """

    raw: np.ndarray
    n_times: int
    channel_labels: tuple = ()

    @classmethod
    def from_epochs(cls, epochs):
        X = as_epoch_array(epochs)
        labels = tuple(epochs.channel_labels) if isinstance(epochs, EpochSet) else \
            tuple(str(i) for i in range(X.shape[1]))
        return cls(raw_covariance(X), X.shape[-1], labels)

    def __len__(self):
        return len(self.raw)

    @property
    def n_channels(self):
        return self.raw.shape[-1]

    def features(self, channels=None, shrinkage=None):
        P = self.raw if channels is None else self.raw[:, channels][:, :, channels]
        if shrinkage is None:
            shrinkage = default_shrinkage(P.shape[-1], self.n_times)
        return shrink(P, shrinkage)


def as_covstack(x):
    return x if isinstance(x, CovStack) else CovStack.from_epochs(x)


@dataclass(frozen=True)
class DetectorConfig:
    metric: Metric = Metric.LOG_EUCLIDEAN
    K: int = 3
    L: int = 25
    V: int = 10
    shrinkage: float | None = None
    seed: int = 0
    guard: int = 1

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric.parse(self.metric))
        if self.K < 1 or self.L < self.K:
            raise ValueError(f"need 1 <= K <= L, got K={self.K}, L={self.L}")
        if self.V < 1:
            raise ValueError("V must be positive")
        if self.guard < 0:
            raise ValueError("guard must be nonnegative")


def learning_periods(n_ref, L, V, guard=1):
    """Split ``n_ref`` reference epochs into ``V`` contiguous folds.

    Fold ``v`` owns the ``v``-th of ``V`` contiguous blocks. Its learning
    period is the ``L`` consecutive epochs starting at the block start
    (shifted back so it fits inside the recording). The test set is every
    other reference epoch except ``guard`` epochs on each side of the
    learning period, which share samples with it when windows overlap.

    Returns a list of ``(learn_idx, test_idx)`` pairs.
    """
    need = L + 2 * guard + 1
    if n_ref < need or n_ref < V:
        raise ValueError(f"need at least {max(need, V)} reference epochs for L={L}, "
                         f"V={V}, guard={guard}; got {n_ref}")
    blocks = np.array_split(np.arange(n_ref), V)
    folds = []
    idx = np.arange(n_ref)
    for block in blocks:
        start = min(int(block[0]), n_ref - L)
        learn = np.arange(start, start + L)
        test = idx[(idx < start - guard) | (idx >= start + L + guard)]
        folds.append((learn, test))
    return folds


def fold_seed(seed, fold):
    return int(seed) * 1009 + int(fold)


###############################################################################
# Cross-validated AUC


@dataclass
class SweepResult:
    axes: tuple
    cells: list = field(default_factory=list)
    n_folds: int = 0
    meta: dict = field(default_factory=dict)

    def add(self, coords, fold_aucs, valid=True):
        fold_aucs = [float(a) for a in fold_aucs]
        if valid and fold_aucs:
            arr = np.array(fold_aucs)
            mean = float(arr.mean())
            se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        else:
            mean, se = float("nan"), float("nan")
        self.cells.append({"coords": tuple(coords), "mean_auc": mean, "stderr": se,
                           "fold_aucs": fold_aucs, "valid": bool(valid)})

    def cell(self, *coords):
        for c in self.cells:
            if c["coords"] == tuple(coords):
                return c
        raise KeyError(coords)

    @property
    def mean_aucs(self):
        return np.array([c["mean_auc"] for c in self.cells])

    def to_table(self):
        """Comma-separated table, one row per cell."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.axes) + ["valid", "mean_auc", "stderr", "n_folds", "fold_aucs"])
        for c in self.cells:
            w.writerow([_cell_fmt(v) for v in c["coords"]]
                       + [int(c["valid"]), _cell_fmt(c["mean_auc"]), _cell_fmt(c["stderr"]),
                          len(c["fold_aucs"]), ";".join(_cell_fmt(a) for a in c["fold_aucs"])])
        return buf.getvalue()

    def summary(self):
        valid = [c for c in self.cells if c["valid"]]
        best = max(valid, key=lambda c: c["mean_auc"]) if valid else None
        return {"axes": list(self.axes), "n_cells": len(self.cells), "n_valid": len(valid),
                "n_folds": self.n_folds, "meta": self.meta,
                "best": None if best is None else {"coords": list(best["coords"]),
                                                   "mean_auc": best["mean_auc"],
                                                   "stderr": best["stderr"]}}

    def write(self, table_path, summary_path=None):
        with open(table_path, "w") as fh:
            fh.write(self.to_table())
        if summary_path is not None:
            with open(summary_path, "w") as fh:
                json.dump(self.summary(), fh, indent=2, default=_json_default)
                fh.write("\n")


def _cell_fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return "-".join(_cell_fmt(x) for x in v)
    return str(v)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Metric):
        return o.value
    raise TypeError(type(o))


def detector_fold_auc(reference, altered, config: DetectorConfig, fold, channels=None, folds=None):
    """AUC of one fold: learn on the fold's reference period, score the rest."""
    reference = as_covstack(reference)
    altered = as_covstack(altered)
    if folds is None:
        folds = learning_periods(len(reference), config.L, config.V, config.guard)
    learn, test = folds[fold]
    ref = reference.features(channels, config.shrinkage)
    alt = altered.features(channels, config.shrinkage)
    model = train(ref[learn], config.K, config.metric, seed=fold_seed(config.seed, fold))
    return auc_score(score_covariances(model, ref[test]), score_covariances(model, alt))


def kfold_auc(reference, altered, config: DetectorConfig = DetectorConfig(), channels=None,
              jobs=1):
    """Per-fold AUCs of the prototype detector (list of length ``V``).

    Raises ``ValueError`` naming the required number of reference epochs if
    there are too few.
    """
    reference = as_covstack(reference)
    altered = as_covstack(altered)
    if len(altered) == 0:
        raise ValueError("no altered-condition epochs")
    folds = learning_periods(len(reference), config.L, config.V, config.guard)
    run = lambda v: detector_fold_auc(reference, altered, config, v, channels, folds)
    return _map(run, range(config.V), jobs)


def _map(fn, items, jobs):
    items = list(items)
    if jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    return Parallel(n_jobs=jobs)(delayed(fn)(x) for x in items)


def evaluate(reference, altered, config: DetectorConfig = DetectorConfig(), channels=None,
             jobs=1) -> SweepResult:
    res = SweepResult(("metric", "K", "L"), n_folds=config.V,
                      meta={"V": config.V, "seed": config.seed, "guard": config.guard})
    res.add((config.metric.value, config.K, config.L),
            kfold_auc(reference, altered, config, channels, jobs))
    return res


###############################################################################
# Baselines under the same folds


def ocsvm_kfold_auc(ref_feats, alt_feats, config: DetectorConfig, nu=0.1, standardize=False):
    """One-class SVM trained on each learning period; AUC per fold."""
    ref_feats = np.asarray(ref_feats, dtype=float)
    alt_feats = np.asarray(alt_feats, dtype=float)
    out = []
    for learn, test in learning_periods(len(ref_feats), config.L, config.V, config.guard):
        Xtr, Xte, Xalt = ref_feats[learn], ref_feats[test], alt_feats
        if standardize:
            mu, sd = Xtr.mean(0), Xtr.std(0)
            sd[sd == 0] = 1.0
            Xtr, Xte, Xalt = (Xtr - mu) / sd, (Xte - mu) / sd, (Xalt - mu) / sd
        model = baselines.ocsvm_train(Xtr, nu=nu)
        out.append(auc_score(baselines.ocsvm_score(model, Xte), baselines.ocsvm_score(model, Xalt)))
    return out


def airflow_feature_search(ref_feats, alt_feats, config: DetectorConfig, nu=0.1,
                           names=baselines.AIRFLOW6) -> SweepResult:
    """Cross-validated OCSVM AUC for every nonempty subset of air-flow descriptors.

    ``ref_feats``/``alt_feats`` hold all descriptors in the order of ``names``;
    features are standardized on each learning period.
    """
    ref_feats = np.asarray(ref_feats, dtype=float)
    alt_feats = np.asarray(alt_feats, dtype=float)
    res = SweepResult(("features",), n_folds=config.V, meta={"nu": nu, "V": config.V})
    for size in range(1, len(names) + 1):
        for subset in itertools.combinations(range(len(names)), size):
            cols = list(subset)
            aucs = ocsvm_kfold_auc(ref_feats[:, cols], alt_feats[:, cols], config, nu, standardize=True)
            res.add(("+".join(names[i] for i in cols),), aucs)
    return res


def csp_lda_kfold_auc(ref_epochs, alt_epochs, config: DetectorConfig):
    """Two-class CSP + LDA: each fold learns on matching periods of both classes."""
    R = as_epoch_array(ref_epochs)
    A = as_epoch_array(alt_epochs)
    rf = learning_periods(len(R), config.L, config.V, config.guard)
    af = learning_periods(len(A), config.L, config.V, config.guard)
    out = []
    for (lr, tr), (la, ta) in zip(rf, af):
        model = baselines.csp_lda_fit(R[lr], A[la])
        out.append(auc_score(baselines.csp_lda_score(model, R[tr]),
                             baselines.csp_lda_score(model, A[ta])))
    return out


###############################################################################
# Sweeps


def default_band_grid(max_hz=30.0):
    """Bands from 0 to ``max_hz`` with widths 4 to 22 Hz (8-24 Hz included)."""
    bands = []
    for low in range(0, int(max_hz), 4):
        for width in (4, 8, 12, 16, 20, 22):
            high = low + width
            if high <= max_hz:
                bands.append((float(low), float(high)))
    return bands


def preprocess(rec: Recording, band, window_s=5.0, overlap=0.5, target_hz=None,
               condition="unknown", order=None) -> EpochSet:
    out = bandpass_filter(rec, FilterSpec(band[0], band[1], order))
    if target_hz is not None and target_hz != out.sample_rate_hz:
        out = downsample(out, target_hz)
    return epoch_windows(out, window_s, overlap, condition)


def sweep_band(ref_rec: Recording, alt_rec: Recording, band_grid=None,
               config: DetectorConfig = DetectorConfig(), window_s=5.0, overlap=0.5,
               target_hz=None, jobs=1, order=None) -> SweepResult:
    """Cross-validated AUC for every band of ``band_grid``.

    ``order`` fixes the FIR order for every band; by default it follows each
    band's low edge, so high bands get short filters with wide transitions.
    """
    band_grid = default_band_grid() if band_grid is None else [tuple(map(float, b)) for b in band_grid]

    def run(band):
        ref = preprocess(ref_rec, band, window_s, overlap, target_hz, "SV", order)
        alt = preprocess(alt_rec, band, window_s, overlap, target_hz, "LD", order)
        return kfold_auc(ref, alt, config)

    res = SweepResult(("low_hz", "high_hz"), n_folds=config.V,
                      meta={"metric": config.metric.value, "K": config.K, "L": config.L,
                            "window_s": window_s, "overlap": overlap, "order": order})
    for band, aucs in zip(band_grid, _map(run, band_grid, jobs)):
        res.add(band, aucs)
    return res


def sweep_KL(reference, altered, K_range=range(1, 8), L_range=range(20, 45, 5),
             config: DetectorConfig = DetectorConfig(), jobs=1) -> SweepResult:
    """Grid over prototypes ``K`` and learning size ``L``; cells with L < K are invalid."""
    reference = as_covstack(reference)
    altered = as_covstack(altered)
    K_range, L_range = list(K_range), list(L_range)
    # surface the "too few epochs" error before any work starts
    learning_periods(len(reference), max(L_range), config.V, config.guard)
    grid = [(K, L) for K in K_range for L in L_range]

    def run(cell):
        K, L = cell
        if L < K:
            return None
        return kfold_auc(reference, altered, replace(config, K=K, L=L))

    res = SweepResult(("K", "L"), n_folds=config.V, meta={"metric": config.metric.value})
    for cell, aucs in zip(grid, _map(run, grid, jobs)):
        res.add(cell, aucs or [], valid=aucs is not None)
    return res


def electrode_curve(reference, altered, ranking, config: DetectorConfig = DetectorConfig(),
                    min_channels=2, jobs=1) -> SweepResult:
    """AUC with the top-``n`` ranked channels, for ``n`` from all down to 2."""
    reference = as_covstack(reference)
    altered = as_covstack(altered)
    order = list(getattr(ranking, "order", ranking))
    if sorted(order) != list(range(reference.n_channels)):
        raise ValueError("ranking must be a permutation of the epoch channels")
    sizes = list(range(len(order), min_channels - 1, -1))

    def run(n):
        return kfold_auc(reference, altered, config, channels=sorted(order[:n]))

    res = SweepResult(("n_channels", "n_removed"), n_folds=config.V,
                      meta={"order": order, "metric": config.metric.value})
    for n, aucs in zip(sizes, _map(run, sizes, jobs)):
        res.add((n, len(order) - n), aucs)
    return res
