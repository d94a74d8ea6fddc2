import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperfuse.cloud.kmeans import assign, kmeans, kmeans_plus_plus
from hyperfuse.errors import TooFewPoints
from hyperfuse.rng import Xoshiro256


def toy():
    x = np.zeros((4, 128))
    x[:, 0] = [0.0, 1.0, 9.0, 10.0]
    return x


def test_toy_two_clusters():
    r = kmeans(toy(), 2, seed=0)
    assert r.inertia == 1.0
    assert sorted(r.centroids[:, 0]) == [0.5, 9.5]
    assert r.assignments[0] == r.assignments[1] != r.assignments[2] == r.assignments[3]


def test_both_partitions_enumerated():
    # exhaustive oracle over all 2-partitions of {0, 1, 9, 10}
    vals = np.array([0.0, 1.0, 9.0, 10.0])
    best = np.inf
    for mask in range(1, 8):
        a = vals[[(mask >> i) & 1 == 1 for i in range(4)]]
        b = vals[[(mask >> i) & 1 == 0 for i in range(4)]]
        best = min(best, ((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum())
    assert best == kmeans(toy(), 2).inertia


def test_k_equals_n():
    x = np.random.default_rng(0).random((12, 128))
    r = kmeans(x, 12)
    assert r.inertia == 0.0
    assert sorted(r.assignments) == list(range(12))


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        kmeans(np.zeros((3, 2)), 4)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_inertia_monotone_and_assignment_exact(seed, k):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 6))
    r = kmeans(x, k, seed=seed)
    hist = np.array(r.inertia_history)
    assert np.all(np.diff(hist) <= 1e-9 * max(1.0, hist[0]))
    d2 = ((x[:, None, :] - r.centroids[None, :, :]) ** 2).sum(-1)
    np.testing.assert_array_equal(r.assignments, np.argmin(d2, axis=1))


def test_deterministic_and_thread_independent():
    x = np.random.default_rng(1).random((500, 32))
    a = kmeans(x, 9, seed=4, threads=1)
    b = kmeans(x, 9, seed=4, threads=4)
    assert a.centroids.tobytes() == b.centroids.tobytes()
    np.testing.assert_array_equal(a.assignments, b.assignments)


def test_duplicates_reseed_keeps_every_cluster_populated():
    x = np.zeros((10, 3))
    x[7:, 0] = 1.0
    r = kmeans(x, 3)
    assert r.inertia == 0.0
    assert set(r.assignments.tolist()) <= {0, 1, 2}


def test_plus_plus_distinct_rows():
    x = np.random.default_rng(2).random((40, 5))
    idx = kmeans_plus_plus(x, 10, Xoshiro256(0))
    assert len(set(idx.tolist())) == 10


def test_assign_ties_to_lowest_centroid():
    C = np.array([[0.0], [2.0], [2.0]])
    labels, d2 = assign(np.array([[1.0], [2.0]]), C)
    assert labels.tolist() == [0, 1] and d2.tolist() == [1.0, 0.0]
