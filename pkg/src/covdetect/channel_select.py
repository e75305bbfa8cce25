"""Channel ranking: backward elimination (CHOrRa), rank aggregation, CSP weights."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import beta

from . import baselines
from .evaluation import (DetectorConfig, _map, as_covstack, detector_fold_auc,
                         learning_periods)

METHODS = ("chorra", "rra", "averaged", "csp")


@dataclass(frozen=True, eq=False)
class RankedChannelList:
    """Channels from most to least relevant with one score per position."""

    order: tuple
    scores: tuple
    method: str
    labels: tuple = ()

    def __post_init__(self):
        order = tuple(int(c) for c in self.order)
        if len(set(order)) != len(order):
            raise ValueError("ranking contains a channel twice")
        if len(self.scores) != len(order):
            raise ValueError("one score per ranked channel is required")
        if self.method not in METHODS:
            raise ValueError(f"unknown ranking method {self.method!r}")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))

    def __len__(self):
        return len(self.order)

    def positions(self):
        """1-based position of every channel."""
        return {c: i + 1 for i, c in enumerate(self.order)}

    def top(self, n):
        return self.order[:n]


class EvaluationError(RuntimeError):
    pass


###############################################################################
# Backward elimination


def chorra_intra(eval_fn: Callable[[tuple], float], initial_channels: Sequence[int],
                 rule="max", min_channels=2) -> RankedChannelList:
    """Rank channels by recursive backward elimination.

    Each round evaluates ``eval_fn`` on every subset that leaves out one
    remaining channel. With ``rule="max"`` the channel whose absence gives the
    highest AUC (the least useful one) is removed; ``rule="min"`` removes the
    one whose absence gives the lowest AUC. Ties go to the lowest channel
    index. Elimination stops at ``min_channels`` survivors, which are ordered
    by the last round's results: the survivor whose absence cost more AUC
    ranks first. No evaluation beyond the elimination rounds is made.

    The returned order runs from the survivors, through the last removed, to
    the first removed channel. A channel's score is the AUC obtained without
    it in the round it was removed (for survivors, in the last round).
    """
    if rule not in ("max", "min"):
        raise ValueError("rule must be 'max' or 'min'")
    remaining = sorted(int(c) for c in initial_channels)
    if len(remaining) <= min_channels:
        raise ValueError(f"need more than {min_channels} channels, got {len(remaining)}")
    removed, removed_scores = [], []
    last_round = {}
    while len(remaining) > min_channels:
        aucs = {}
        for ch in remaining:
            subset = tuple(c for c in remaining if c != ch)
            try:
                aucs[ch] = float(eval_fn(subset))
            except Exception as exc:
                raise EvaluationError(f"evaluation failed on channel subset {subset}: {exc}") from exc
        sign = -1.0 if rule == "max" else 1.0
        victim = min(remaining, key=lambda c: (sign * aucs[c], c))
        removed.append(victim)
        removed_scores.append(aucs[victim])
        remaining.remove(victim)
        last_round = aucs
    survivors = sorted(remaining, key=lambda c: (last_round[c], c))
    order = survivors + removed[::-1]
    scores = [last_round[c] for c in survivors] + removed_scores[::-1]
    return RankedChannelList(tuple(order), tuple(scores), "chorra")


def chorra_from_covariances(reference, altered, config: DetectorConfig = DetectorConfig(),
                            folds=(0,), channels=None, rule="max") -> RankedChannelList:
    """CHOrRa with the detector's AUC as the criterion.

    The AUC is averaged over the learning periods listed in ``folds``.
    """
    reference = as_covstack(reference)
    altered = as_covstack(altered)
    splits = learning_periods(len(reference), config.L, config.V, config.guard)
    channels = list(range(reference.n_channels)) if channels is None else list(channels)
    folds = [folds] if np.isscalar(folds) else list(folds)

    def eval_fn(subset):
        return float(np.mean([detector_fold_auc(reference, altered, config, v, list(subset), splits)
                              for v in folds]))

    ranked = chorra_intra(eval_fn, channels, rule=rule)
    return _with_labels(ranked, reference.channel_labels)


###############################################################################
# Aggregation


def _check_lists(lists):
    lists = list(lists)
    if not lists:
        raise ValueError("no rankings to aggregate")
    channels = sorted(lists[0].order)
    for r in lists[1:]:
        if sorted(r.order) != channels:
            raise ValueError("rankings cover different channel sets")
    return lists, channels


def rra_scores(rank_matrix):
    """Robust rank aggregation scores.

    ``rank_matrix`` is (n_channels, m) of normalized ranks in (0, 1]. For each
    channel the ranks are sorted and compared with the order statistics of
    ``m`` uniforms; the score is ``m * min_k BetaCDF(r_(k); k, m-k+1)``,
    capped at 1.
    """
    r = np.sort(np.asarray(rank_matrix, dtype=float), axis=1)
    m = r.shape[1]
    k = np.arange(1, m + 1)
    rho = np.min(beta.cdf(r, k, m - k + 1), axis=1)
    return np.minimum(1.0, m * rho)


def robust_rank_aggregate(lists) -> RankedChannelList:
    lists, channels = _check_lists(lists)
    n = len(channels)
    pos = np.array([[r.positions()[c] for r in lists] for c in channels]) / n
    scores = rra_scores(pos)
    idx = sorted(range(n), key=lambda i: (scores[i], channels[i]))
    return RankedChannelList(tuple(channels[i] for i in idx), tuple(scores[i] for i in idx),
                             "rra", lists[0].labels)


def averaged_rank_aggregate(lists) -> RankedChannelList:
    lists, channels = _check_lists(lists)
    means = [float(np.mean([r.positions()[c] for r in lists])) for c in channels]
    idx = sorted(range(len(channels)), key=lambda i: (means[i], channels[i]))
    return RankedChannelList(tuple(channels[i] for i in idx), tuple(means[i] for i in idx),
                             "averaged", lists[0].labels)


AGGREGATORS = {"rra": robust_rank_aggregate, "averaged": averaged_rank_aggregate}


###############################################################################
# CSP weights


def _interleave(w_first, w_last, channels):
    """Alternate the largest remaining |weight| of each pattern, skipping repeats."""
    n = len(channels)
    o1 = sorted(range(n), key=lambda i: (-abs(w_first[i]), i))
    o2 = sorted(range(n), key=lambda i: (-abs(w_last[i]), i))
    taken, order, scores = set(), [], []
    i1 = i2 = 0
    turn = 0
    while len(order) < n:
        seq, w = (o1, w_first) if turn == 0 else (o2, w_last)
        pos = i1 if turn == 0 else i2
        while pos < n and seq[pos] in taken:
            pos += 1
        if pos < n:
            c = seq[pos]
            taken.add(c)
            order.append(channels[c])
            scores.append(abs(w[c]))
            pos += 1
        if turn == 0:
            i1 = pos
        else:
            i2 = pos
        turn = 1 - turn
    return order, scores


def csp_rank(model_or_patterns, channels=None) -> RankedChannelList:
    """Ranking from the first and last CSP patterns.

    Accepts a :class:`~covdetect.baselines.CspModel` or a pair
    ``(a_first, a_last)`` of pattern vectors.
    """
    if isinstance(model_or_patterns, baselines.CspModel):
        A = model_or_patterns.A
        a1, an = A[:, 0], A[:, -1]
    else:
        try:
            a1, an = model_or_patterns
        except (TypeError, ValueError):
            raise ValueError("need a CSP model or the pair (a_first, a_last)") from None
        if a1 is None or an is None:
            raise ValueError("missing CSP pattern")
    a1 = np.asarray(a1, dtype=float)
    an = np.asarray(an, dtype=float)
    if a1.shape != an.shape:
        raise ValueError("patterns differ in length")
    channels = list(range(len(a1))) if channels is None else list(channels)
    order, scores = _interleave(a1, an, channels)
    return RankedChannelList(tuple(order), tuple(scores), "csp")


def csp_rank_inter(pattern_pairs, channels=None) -> RankedChannelList:
    """Ranking from several subjects' (or folds') first/last patterns.

    Each pattern is divided by its maximal absolute entry, absolute values
    are averaged across subjects, then interleaved as in :func:`csp_rank`.
    """
    pairs = list(pattern_pairs)
    if not pairs:
        raise ValueError("no patterns given")
    norm = lambda a: np.abs(a) / np.max(np.abs(a))
    a1 = np.mean([norm(np.asarray(p[0], dtype=float)) for p in pairs], axis=0)
    an = np.mean([norm(np.asarray(p[1], dtype=float)) for p in pairs], axis=0)
    return csp_rank((a1, an), channels)


###############################################################################
# V-fold rankings


def vfold_rank(reference, altered, V=10, method="rra", config: DetectorConfig = DetectorConfig(),
               channels=None, rule="max", jobs=1) -> RankedChannelList:
    """One ranking per learning period, combined across the ``V`` periods.

    ``method`` is ``"rra"`` or ``"averaged"`` for CHOrRa lists, or ``"csp"``
    to rank from CSP patterns computed on each period (patterns normalized
    and averaged across periods).
    """
    if V < 2:
        raise ValueError("V must be at least 2")
    reference = as_covstack(reference)
    altered = as_covstack(altered)
    config = DetectorConfig(config.metric, config.K, config.L, V, config.shrinkage,
                            config.seed, config.guard)
    folds = learning_periods(len(reference), config.L, V, config.guard)
    channels = list(range(reference.n_channels)) if channels is None else list(channels)
    if method == "csp":
        ref = reference.features(channels, config.shrinkage)
        alt = altered.features(channels, config.shrinkage)
        alt_folds = learning_periods(len(altered), config.L, V, config.guard)
        pairs = []
        for (learn, _), (alearn, _) in zip(folds, alt_folds):
            model = baselines.csp_fit(ref[learn], alt[alearn])
            pairs.append((model.A[:, 0], model.A[:, -1]))
        return _with_labels(csp_rank_inter(pairs, channels), reference.channel_labels)
    if method not in AGGREGATORS:
        raise ValueError(f"unknown aggregation {method!r}")

    def one(v):
        def eval_fn(subset):
            return detector_fold_auc(reference, altered, config, v, list(subset), folds)
        return chorra_intra(eval_fn, channels, rule=rule)

    lists = _map(one, range(V), jobs)
    return _with_labels(AGGREGATORS[method](lists), reference.channel_labels)


def _with_labels(ranked, labels):
    return RankedChannelList(ranked.order, ranked.scores, ranked.method, tuple(labels))


###############################################################################
# File format


def write_ranking(ranked: RankedChannelList, path, provenance=None):
    labels = ranked.labels
    lines = []
    if provenance:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in provenance.items()))
    lines.append("rank,channel_index,channel_label,score,method")
    for i, (c, s) in enumerate(zip(ranked.order, ranked.scores), start=1):
        label = labels[c] if c < len(labels) else str(c)
        lines.append(f"{i},{c},{label},{float(s)!r},{ranked.method}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ranking(path) -> RankedChannelList:
    order, scores, method, labels = [], [], None, {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#") or line.startswith("rank,"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 columns")
        order.append(int(parts[1]))
        labels[int(parts[1])] = parts[2]
        scores.append(float(parts[3]))
        method = parts[4]
    if not order:
        raise ValueError(f"{path}: empty ranking")
    label_tuple = tuple(labels.get(i, str(i)) for i in range(max(order) + 1))
    return RankedChannelList(tuple(order), tuple(scores), method, label_tuple)
