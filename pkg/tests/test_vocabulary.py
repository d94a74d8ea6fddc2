import numpy as np
import pytest

from hyperfuse.cloud import (
    PointCloud, build_vocabulary, decode_vocabulary, encode_vocabulary, read_vocabulary,
    write_vocabulary,
)
from hyperfuse.cloud.vocabulary import default_word_count
from hyperfuse.descriptors import dequantize, quantize
from hyperfuse.errors import MalformedHeader, NoDescriptors, TruncatedPayload


def random_cloud(n_points=300, n_desc=1000, seed=0):
    rng = np.random.default_rng(seed)
    d = np.abs(rng.normal(size=(n_desc, 128)))
    d = dequantize(quantize(d / np.linalg.norm(d, axis=1, keepdims=True)))
    ids = rng.integers(0, n_points, n_desc)
    return PointCloud(rng.random((n_points, 3)), descriptor_point_ids=ids, descriptors=d)


def test_word_to_points_covers_every_descriptor():
    cloud = random_cloud()
    v = build_vocabulary(cloud, 50)
    listed = np.concatenate([v.word_to_points(w) for w in range(v.k)])
    np.testing.assert_array_equal(np.bincount(listed, minlength=300),
                                  np.bincount(cloud.descriptor_point_ids, minlength=300))


def test_entries_sit_under_their_nearest_word():
    v = build_vocabulary(random_cloud(), 20)
    for w in range(v.k):
        _, ent = v.word_entries(w)
        if len(ent):
            assert np.all(v.quantize(ent) == w)


def test_default_word_count():
    assert default_word_count(10) == 2
    assert default_word_count(3) == 1
    assert default_word_count(10**7) == 100_000
    assert default_word_count(10, 7) == 7 and default_word_count(10, 50) == 10


def test_no_descriptors():
    with pytest.raises(NoDescriptors):
        build_vocabulary(PointCloud(np.zeros((2, 3))), 1)


def test_file_round_trip(tmp_path):
    v = build_vocabulary(random_cloud(), 30, seed=3)
    write_vocabulary(v, tmp_path / "v.hfv")
    back = read_vocabulary(tmp_path / "v.hfv")
    assert encode_vocabulary(back) == (tmp_path / "v.hfv").read_bytes()
    np.testing.assert_array_equal(back.entry_descriptors, v.entry_descriptors)
    np.testing.assert_array_equal(back.points, v.points)
    np.testing.assert_array_equal(back.centroids, v.centroids.astype(np.float32))
    data = encode_vocabulary(v)
    with pytest.raises(TruncatedPayload):
        decode_vocabulary(data[:-1])
    with pytest.raises(MalformedHeader):
        decode_vocabulary(b"XXXX" + data[4:])


def test_cluster_xyz_diagnostic():
    from hyperfuse.cloud import PointCloud, cluster_xyz
    pts = np.vstack([np.zeros((5, 3)), np.full((5, 3), 10.0)])
    res = cluster_xyz(PointCloud(pts), 2, seed=1)
    assert res.inertia == 0.0 and sorted(res.centroids[:, 0]) == [0.0, 10.0]
