"""K-means over SPD matrices with the metric's own distance and mean."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spd_core import Metric, check_spd, mean, pairwise_distances


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    prototypes: np.ndarray          # (K, n, n)
    metric: Metric
    inertia: float
    seed: int
    labels: np.ndarray = field(default=None, repr=False)
    inertia_history: tuple = ()
    n_iter: int = 0
    converged: bool = True

    @property
    def K(self):
        return len(self.prototypes)


def _assign_all(mats, prototypes, metric):
    d = pairwise_distances(mats, prototypes, metric)
    # argmin returns the first minimum: ties go to the lowest prototype index
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(mats)), labels]


def kmeans_fit(mats, K, metric=Metric.LOG_EUCLIDEAN, seed=0, max_iter=50,
               mean_tol=1e-8, mean_max_iter=100) -> PrototypeSet:
    """Cluster SPD matrices into ``K`` groups.

    Prototypes start as ``K`` distinct members drawn with ``seed``. Each
    round assigns every matrix to its nearest prototype, then replaces each
    prototype by the metric's mean of its cluster, until the assignment stops
    changing or ``max_iter`` rounds have run. A cluster that empties is
    re-seeded with the matrix farthest from its current prototype.
    """
    metric = Metric.parse(metric)
    mats = check_spd(np.asarray(mats, dtype=float), "training matrix")
    if mats.ndim != 3:
        raise ValueError("expected a stack of matrices (n, c, c)")
    n = len(mats)
    if not 1 <= K <= n:
        raise ValueError(f"K={K} must satisfy 1 <= K <= {n} (number of matrices)")

    rng = np.random.default_rng(seed)
    init = np.sort(rng.choice(n, size=K, replace=False))
    prototypes = mats[init].copy()
    labels, dist = _assign_all(mats, prototypes, metric)
    history = [float(np.sum(dist ** 2))]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        for k in range(K):
            members = labels == k
            if not np.any(members):
                counts = np.bincount(labels, minlength=K)
                donors = np.where(counts[labels] > 1, dist, -1.0)
                far = int(np.argmax(donors))
                prototypes[k] = mats[far]
                labels[far] = k
                dist[far] = 0.0
                members = labels == k
            prototypes[k] = mean(mats[members], metric, tol=mean_tol, max_iter=mean_max_iter)[0]
        new_labels, dist = _assign_all(mats, prototypes, metric)
        history.append(float(np.sum(dist ** 2)))
        if np.array_equal(new_labels, labels):
            converged = True
            labels = new_labels
            break
        labels = new_labels
    return PrototypeSet(prototypes, metric, history[-1], int(seed), labels,
                        tuple(history), it, converged)


def assign(P, ps: PrototypeSet):
    """Nearest prototype of ``P``: returns ``(index, distance)``.

    Ties resolve to the lowest index.
    """
    P = np.asarray(P, dtype=float)
    if P.shape != ps.prototypes.shape[1:]:
        raise ValueError(f"matrix shape {P.shape} does not match prototypes "
                         f"{ps.prototypes.shape[1:]}")
    d = pairwise_distances(P[None], ps.prototypes, ps.metric)[0]
    k = int(np.argmin(d))
    return k, float(d[k])
