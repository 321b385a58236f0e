"""K-means checks: planted-structure recovery, determinism, empty-cluster
repair, and contract errors."""

import numpy as np
import pytest

from fedssa.cluster import kmeans
from fedssa.errors import ContractError
from fedssa.rng import stream


def _centers_of(pts, labels):
    return {c: pts[labels == c].mean(axis=0) for c in np.unique(labels)}


def test_planted_two_groups_recovered_over_seeds():
    for seed in range(20):
        rng = stream(seed, "test-kmeans")
        a = rng.normal(loc=-5.0, scale=0.3, size=(12, 2))
        b = rng.normal(loc=5.0, scale=0.3, size=(8, 2))
        pts = np.vstack([a, b])
        labels = kmeans(pts, 2, stream(seed, "test-kmeans-run"))
        assert len(set(labels[:12].tolist())) == 1
        assert len(set(labels[12:].tolist())) == 1
        assert labels[0] != labels[12]
        got = sorted(float(c[0]) for c in _centers_of(pts, labels).values())
        assert got[0] == pytest.approx(-5.0, abs=0.5)
        assert got[1] == pytest.approx(5.0, abs=0.5)


def test_kmeans_deterministic_given_stream():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((30, 3))
    l1 = kmeans(pts, 4, stream(7, "km"))
    l2 = kmeans(pts, 4, stream(7, "km"))
    assert np.array_equal(l1, l2)


def test_kmeans_k_clamped_to_points():
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    labels = kmeans(pts, 5, stream(0, "km"))
    assert sorted(labels.tolist()) == [0, 1]


def test_kmeans_k_one():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((10, 2))
    labels = kmeans(pts, 1, stream(0, "km"))
    assert np.all(labels == 0)


def test_kmeans_coincident_points():
    pts = np.ones((6, 2))
    labels = kmeans(pts, 3, stream(0, "km"))
    assert labels.shape == (6,)
    assert np.all(labels >= 0)


def test_kmeans_every_cluster_nonempty():
    rng = np.random.default_rng(5)
    pts = rng.standard_normal((9, 2))
    for k in (2, 3, 4):
        labels = kmeans(pts, k, stream(k, "km"))
        assert set(labels.tolist()) == set(range(k))


def test_kmeans_contract_errors():
    with pytest.raises(ContractError):
        kmeans(np.zeros((0, 2)), 2, stream(0, "km"))
    with pytest.raises(ContractError):
        kmeans(np.zeros((3, 2)), 0, stream(0, "km"))


def test_kmeans_improves_or_matches_random_assignment():
    rng = np.random.default_rng(2)
    pts = rng.standard_normal((40, 2))
    labels = kmeans(pts, 3, stream(1, "km"))
    centers = np.vstack([pts[labels == j].mean(axis=0) for j in range(3)])
    inertia = np.sum((pts - centers[labels]) ** 2)
    rand_labels = rng.integers(0, 3, size=40)
    while len(set(rand_labels.tolist())) < 3:
        rand_labels = rng.integers(0, 3, size=40)
    rand_centers = np.vstack([pts[rand_labels == j].mean(axis=0) for j in range(3)])
    rand_inertia = np.sum((pts - rand_centers[rand_labels]) ** 2)
    assert inertia <= rand_inertia + 1e-9
