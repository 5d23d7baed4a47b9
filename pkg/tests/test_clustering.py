
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randcon import _rng
from randcon.clustering import (
    ClusterResult,
    _lloyd,
    brute_force_matching,
    chord_elbow,
    davies_bouldin,
    elbow_k,
    kmeans,
    match_states,
    project_pca,
)
from randcon.errors import DegenerateError, ParameterError


def blobs(seed=0, n=30, centers=((0, 0), (10, 0), (0, 10), (10, 10)), sd=0.5):
    rng = np.random.default_rng(seed)
    return np.concatenate([np.asarray(c) + sd * rng.normal(size=(n, 2)) for c in centers])


def test_db_hand_value():
    x = np.array([[0.0], [2.0], [10.0], [12.0]])
    assert davies_bouldin(x, np.array([0, 0, 1, 1]), np.array([[1.0], [11.0]])) == pytest.approx(0.2, abs=1e-15)


def test_db_point_masses_zero():
    x = np.array([[0.0], [0.0], [5.0], [5.0]])
    assert davies_bouldin(x, np.array([0, 0, 1, 1]), np.array([[0.0], [5.0]])) == 0.0


def test_db_decreases_with_separation():
    labels = np.array([0, 0, 1, 1])
    prev = np.inf
    for gap in (5.0, 10.0, 20.0, 40.0):
        x = np.array([[0.0], [2.0], [gap], [gap + 2]])
        db = davies_bouldin(x, labels, np.array([[1.0], [gap + 1]]))
        assert db < prev
        prev = db


def test_db_coincident_centroids():
    with pytest.raises(DegenerateError):
        davies_bouldin(np.zeros((4, 1)), np.array([0, 0, 1, 1]), np.zeros((2, 1)))


def test_separated_duplicates_exact():
    x = np.array([[0.0, 0.0]] * 10 + [[10.0, 10.0]] * 10)
    res = kmeans(x, 2, n_restarts=5)
    assert sorted(map(tuple, res.centroids)) == [(0.0, 0.0), (10.0, 10.0)]
    assert res.inertia == 0.0


def test_defaults_and_determinism():
    x = blobs()
    a, b = kmeans(x, 4, seed=3), kmeans(x, 4, seed=3)
    assert a.n_runs == 100
    assert np.array_equal(a.labels, b.labels) and a.centroids.tobytes() == b.centroids.tobytes()


def test_result_invariants():
    x = blobs(1)
    res = kmeans(x, 4, n_restarts=10, seed=1)
    assert set(res.labels) <= set(range(4))
    for k in range(4):
        np.testing.assert_allclose(res.centroids[k], x[res.labels == k].mean(axis=0), atol=1e-9)
    assert res.db_index == pytest.approx(davies_bouldin(x, res.labels, res.centroids), abs=1e-9)
    assert np.all(res.db_index <= res.restart_db)
    assert res.restart_db[res.winning_run] == res.db_index


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lloyd_monotone(seed):
    x = np.random.default_rng(seed).normal(size=(60, 3))
    x_sq = np.einsum("sd,sd->s", x, x)
    _, _, trace = _lloyd(x, 4, 20, _rng.stream(seed, 0, _rng.KMEANS), x_sq)
    assert np.all(np.diff(trace) <= 1e-9 * max(1.0, trace[0]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sample_order_invariance(seed):
    rng = np.random.default_rng(seed)
    x = blobs(seed % 1000, n=15, sd=2.0)
    perm = rng.permutation(len(x))
    a = kmeans(x, 4, n_restarts=5, seed=seed)
    b = kmeans(x[perm], 4, n_restarts=5, seed=seed)
    assert a.db_index == b.db_index
    assert sorted(map(tuple, a.centroids)) == sorted(map(tuple, b.centroids))
    assert ari_equal(a.labels[perm], b.labels)


def ari_equal(a, b):
    mapping = {}
    for u, v in zip(a, b):
        if mapping.setdefault(u, v) != v:
            return False
    return len(set(mapping.values())) == len(mapping)


def test_kmeans_validation():
    with pytest.raises(ParameterError):
        kmeans(np.zeros((3, 2)) + np.arange(3)[:, None], 4)
    with pytest.raises(DegenerateError):
        kmeans(np.ones((10, 2)), 2)


def test_cluster_result_round_trip(tmp_path):
    res = kmeans(blobs(), 4, n_restarts=3)
    res.save(tmp_path / "c.rcfc", {"note": "x"})
    back = ClusterResult.load(tmp_path / "c.rcfc")
    assert np.array_equal(back.labels, res.labels)
    assert back.centroids.tobytes() == res.centroids.tobytes()
    assert back.db_index == res.db_index


def test_elbow_on_four_blobs():
    x = blobs(2, n=40, centers=((0, 0), (30, 0), (0, 30), (30, 30)))
    assert elbow_k(x, 2, 8, seed=0) == 4


def test_chord_elbow_linear_tie_goes_to_smallest():
    ks = np.arange(2, 9)
    assert chord_elbow(ks, 100.0 - 10 * ks) == 0


def test_match_states_recovers_permutation():
    true = np.random.default_rng(0).normal(size=(5, 8))
    perm = np.array([3, 0, 4, 1, 2])
    est = true[perm]
    m = match_states(est, true)
    assert m.permutation == tuple(perm)
    assert m.total_distance == 0.0


def test_match_states_all_equal_is_identity():
    m = match_states(np.zeros((4, 3)), np.zeros((4, 3)))
    assert m.permutation == (0, 1, 2, 3)


def test_match_states_equals_brute_force():
    rng = np.random.default_rng(7)
    for trial in range(100):
        m = int(rng.integers(1, 8))
        est = rng.normal(size=(m, 5))
        true = rng.normal(size=(m, 5))
        if trial % 5 == 0:
            true = np.round(true)  # coarse values make ties likely
            est = np.round(est)
        fast, slow = match_states(est, true), brute_force_matching(est, true)
        assert fast.permutation == slow.permutation
        assert fast.total_distance == pytest.approx(slow.total_distance, abs=1e-9)


def test_matching_apply():
    m = match_states(np.eye(3)[[2, 0, 1]], np.eye(3))
    np.testing.assert_array_equal(m.apply(np.array([0, 1, 2])), [2, 0, 1])


def test_pca_shape_and_variance():
    x = np.random.default_rng(0).normal(size=(50, 20))
    z = project_pca(x, 10)
    assert z.shape == (50, 10)
    total = ((x - x.mean(0)) ** 2).sum()
    assert (z**2).sum() <= total + 1e-9
    np.testing.assert_allclose(project_pca(x, 20).__pow__(2).sum(), total, rtol=1e-12)
