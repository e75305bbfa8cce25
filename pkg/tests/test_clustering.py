import numpy as np
import pytest

from covdetect.clustering import PrototypeSet, assign, kmeans_fit
from covdetect.spd_core import Metric, distance, mean

from conftest import random_spd


def two_clusters(rng, n=20, dim=3):
    near = lambda c: np.stack([c * random_spd(rng, dim, 1.5) for _ in range(n)])
    return np.concatenate([near(1.0), near(10.0)]), np.repeat([0, 1], n)


@pytest.mark.parametrize("metric", list(Metric))
def test_recovers_separated_clusters(metric, rng):
    mats, truth = two_clusters(rng)
    ps = kmeans_fit(mats, 2, metric, seed=0)
    same = np.array_equal(ps.labels, truth) or np.array_equal(ps.labels, 1 - truth)
    assert same
    assert ps.converged


@pytest.mark.parametrize("metric", list(Metric))
def test_inertia_non_increasing(metric, rng):
    mats = np.stack([random_spd(rng, 3, 20.0) for _ in range(30)])
    ps = kmeans_fit(mats, 4, metric, seed=3)
    h = np.array(ps.inertia_history)
    assert np.all(np.diff(h) <= 1e-9 * h[0])
    assert ps.inertia == pytest.approx(h[-1])


def test_K_equals_n(rng):
    mats = np.stack([random_spd(rng, 3) for _ in range(5)])
    ps = kmeans_fit(mats, 5, "log_euclidean", seed=1)
    assert ps.inertia == pytest.approx(0.0, abs=1e-20)
    for P in ps.prototypes:
        assert min(np.linalg.norm(P - M) for M in mats) < 1e-10


@pytest.mark.parametrize("metric", list(Metric))
def test_K_one_is_mean(metric, rng):
    mats = np.stack([random_spd(rng, 3) for _ in range(8)])
    ps = kmeans_fit(mats, 1, metric)
    np.testing.assert_allclose(ps.prototypes[0], mean(mats, metric)[0], rtol=1e-9)


def test_seeded_determinism(rng):
    mats = np.stack([random_spd(rng, 3, 20.0) for _ in range(25)])
    a = kmeans_fit(mats, 3, "affine_invariant", seed=7)
    b = kmeans_fit(mats, 3, "affine_invariant", seed=7)
    np.testing.assert_array_equal(a.prototypes, b.prototypes)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_invalid_K(rng):
    mats = np.stack([random_spd(rng, 2) for _ in range(3)])
    with pytest.raises(ValueError):
        kmeans_fit(mats, 4)
    with pytest.raises(ValueError):
        kmeans_fit(mats, 0)


def test_empty_cluster_reseeded():
    # duplicates force an empty cluster after the first update
    mats = np.stack([np.eye(2)] * 4 + [np.diag([5.0, 5.0])])
    ps = kmeans_fit(mats, 3, "euclidean", seed=0, max_iter=5)
    assert np.bincount(ps.labels, minlength=3).min() >= 0
    assert len(ps.prototypes) == 3


def test_assign_examples(rng):
    protos = np.stack([np.eye(2), 4 * np.eye(2)])
    ps = PrototypeSet(protos, Metric.LOG_EUCLIDEAN, 0.0, 0)
    assert assign(4 * np.eye(2), ps) == (1, pytest.approx(0.0))
    # log-Euclidean midpoint of I and 4I is 2I: a tie
    k, d = assign(2 * np.eye(2), ps)
    assert k == 0
    P = random_spd(rng, 2)
    k, d = assign(P, ps)
    brute = [distance(P, Q, "log_euclidean") for Q in protos]
    assert k == int(np.argmin(brute)) and d == pytest.approx(min(brute))
    with pytest.raises(ValueError):
        assign(np.eye(3), ps)
