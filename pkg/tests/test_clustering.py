import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clucdd.clustering import (
    AffinityPropagation,
    GaussianMixture,
    KMeans,
    affinity_propagation,
    cluster_points,
    dbscan,
    gmm,
    kmeans,
)
from clucdd.corpus import canonicalize
from clucdd.exceptions import ConfigError, ValidationError
from oracles import affinity_propagation_oracle, kmeans_optimum


def blobs(seed, sizes=(6, 6), spread=0.1, sep=10.0, d=4):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for c, size in enumerate(sizes):
        X.append(rng.normal(c * sep, spread, size=(size, d)))
        y += [c] * size
    return np.vstack(X), np.array(y)


def test_kmeans_recovers_groups():
    X, y = blobs(0)
    assert kmeans(X, 2, seed=1).labels.labels == tuple(canonicalize(y).tolist())


def test_kmeans_one_cluster_centroid_is_mean():
    X, _ = blobs(1)
    est = KMeans(1, random_state=0).fit(X)
    assert set(est.labels_.tolist()) == {0}
    assert np.allclose(est.cluster_centers_[0], X.mean(axis=0))


def test_kmeans_k_equals_n():
    X = np.random.default_rng(2).standard_normal((6, 3))
    res = kmeans(X, 6, seed=0)
    assert res.labels.k == 6 and res.objective == pytest.approx(0.0, abs=1e-12)


def test_kmeans_k_above_n():
    with pytest.raises(ValidationError):
        kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(ValidationError):
        gmm(np.zeros((3, 2)), 4)


def test_kmeans_deterministic_and_permutation_stable():
    X = np.random.default_rng(3).standard_normal((12, 3))
    a = kmeans(X, 3, seed=5)
    assert a == kmeans(X, 3, seed=5)
    Xs, _ = blobs(4, sizes=(4, 4, 4))
    perm = np.random.default_rng(0).permutation(12)
    base = kmeans(Xs, 3, seed=0).labels.as_array()
    back = np.empty(12, dtype=np.int64)
    back[perm] = kmeans(Xs[perm], 3, seed=0).labels.as_array()
    assert tuple(canonicalize(back).tolist()) == tuple(canonicalize(base).tolist())


@pytest.mark.parametrize("seed", range(12))
def test_kmeans_reaches_brute_force_optimum(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 4))
    sizes = rng.multinomial(int(rng.integers(max(k, 3), 9)) - k, [1 / k] * k) + 1
    X, _ = blobs(seed, sizes=tuple(sizes), spread=0.05, sep=5.0, d=2)
    assert kmeans(X, k, seed=seed).objective == pytest.approx(kmeans_optimum(X, k), abs=1e-9)


def test_gmm_matches_kmeans_on_separated():
    X, _ = blobs(5)
    assert gmm(X, 2, seed=0).labels == kmeans(X, 2, seed=0).labels


def test_gmm_symmetric_midpoint():
    X = np.array([[0.0, 0.0], [2.0, 0.0]])
    est = GaussianMixture(2, random_state=0).fit(X)
    assert np.allclose(est.predict_proba([[1.0, 0.0]]), 0.5)


def test_gmm_variance_floor():
    X = np.zeros((4, 2))
    X[2:] = 1.0
    est = GaussianMixture(2, random_state=0).fit(X)
    assert np.all(est.variances_ >= 1e-6)


def test_dbscan_examples():
    X, y = blobs(6)
    assert dbscan(X, eps=1.0, min_pts=3).labels.k == 2
    X_out = np.vstack([X, np.full((1, 4), 100.0)])
    res = dbscan(X_out, eps=1.0, min_pts=3)
    assert res.labels.k == 3 and res.labels.sizes[-1] == 1
    assert dbscan(X, eps=1e3, min_pts=1).labels.k == 1


def test_dbscan_bad_params():
    with pytest.raises(ConfigError):
        dbscan(np.zeros((2, 2)), eps=0.0)


def test_ap_two_blobs_matches_reference():
    X, y = blobs(7, sizes=(5, 5), d=2)
    res = affinity_propagation(X)
    assert res.labels.k == 2
    assert res.labels.labels == tuple(canonicalize(y).tolist())
    assert res.labels.labels == tuple(canonicalize(affinity_propagation_oracle(X)).tolist())


@pytest.mark.parametrize("seed", range(6))
def test_ap_matches_reference_on_random(seed):
    X = np.random.default_rng(seed).standard_normal((9, 2))
    res = affinity_propagation(X)
    assert res.labels.labels == tuple(canonicalize(affinity_propagation_oracle(X)).tolist())


def test_ap_degenerate_inputs():
    assert affinity_propagation(np.ones((5, 3))).labels.k == 1
    two = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert affinity_propagation(two) == affinity_propagation(two)
    with pytest.raises(ValidationError):
        AffinityPropagation().fit(np.zeros((1, 2)))
    with pytest.raises(ConfigError):
        AffinityPropagation(damping=0.2).fit(two)


def test_unknown_method():
    with pytest.raises(ConfigError):
        cluster_points(np.zeros((3, 2)), "spectral", k=2)


def test_ap_ignores_k():
    X, _ = blobs(8, sizes=(4, 4), d=2)
    assert cluster_points(X, "ap", k=7) == cluster_points(X, "ap")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 15), st.integers(1, 4), st.integers(0, 10_000))
def test_outputs_are_partitions(n, k, seed):
    X = np.random.default_rng(seed).standard_normal((n, 3))
    k = min(k, n)
    for method in ("kmeans", "gmm", "dbscan", "ap"):
        lab = cluster_points(X, method, k=k, seed=seed).labels
        assert lab.n == n
        assert tuple(canonicalize(lab.labels).tolist()) == lab.labels
        if method in ("kmeans", "gmm"):
            assert lab.k <= k


def test_sklearn_estimator_api():
    est = KMeans(n_clusters=3, random_state=0)
    assert est.get_params()["n_clusters"] == 3
    X, _ = blobs(9, sizes=(3, 3, 3))
    assert est.fit_predict(X).shape == (9,)
    assert np.array_equal(est.predict(X), est.predict(X))
