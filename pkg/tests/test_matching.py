import numpy as np
import pytest

from hyperfuse.cloud.vocabulary import VisualVocabulary
from hyperfuse.descriptors import DESCRIPTOR_DIM
from hyperfuse.errors import VocabularyTooSmall
from hyperfuse.registration import match_descriptors


def unit(i, scale=1.0):
    v = np.zeros(DESCRIPTOR_DIM)
    v[i] = scale
    return v


def vocab_with(word_entries, n_points=20):
    """Two or more words on coordinate axes; ``word_entries[w]`` lists (point_id, descriptor)."""
    k = len(word_entries)
    centroids = np.stack([unit(w, 0.5) for w in range(k)])
    offsets = np.zeros(k + 1, dtype=np.int64)
    ids, desc = [], []
    for w, entries in enumerate(word_entries):
        offsets[w + 1] = offsets[w] + len(entries)
        for pid, d in entries:
            ids.append(pid)
            desc.append(d)
    pts = np.arange(n_points * 3, dtype=float).reshape(n_points, 3)
    return VisualVocabulary(centroids, offsets, np.array(ids, np.int64),
                            np.array(desc).reshape(-1, DESCRIPTOR_DIM), pts)


def test_equidistant_query_rejected():
    v = vocab_with([[(0, unit(0, 0.5))], [(1, unit(1, 0.5))]])
    q = (unit(0, 0.5) + unit(1, 0.5)) / 2
    assert match_descriptors([[1.0, 2.0]], q, v) == []


def test_per_query_limit_caps_at_five():
    entries = [(pid, unit(0, 0.5 - 0.01 * pid)) for pid in range(8)]
    v = vocab_with([entries, [(9, unit(1, 0.5))]])
    out = match_descriptors([[3.0, 4.0]], unit(0, 0.5), v)
    assert len(out) == 5
    assert [c.point_id for c in out] == [0, 1, 2, 3, 4]
    assert out[0].pixel == (3.0, 4.0) and out[0].xyz == (0.0, 1.0, 2.0)
    assert all(c.word == 0 and c.query == 0 for c in out)
    assert len(match_descriptors([[3.0, 4.0]], unit(0, 0.5), v, per_query_limit=8)) == 8


def test_duplicate_point_ids_collapse():
    entries = [(3, unit(0, 0.5)), (3, unit(0, 0.45)), (4, unit(0, 0.4))]
    v = vocab_with([entries, [(9, unit(1, 0.5))]])
    out = match_descriptors([[0.0, 0.0]], unit(0, 0.5), v)
    assert [c.point_id for c in out] == [3, 4]


def test_thresholds():
    v = vocab_with([[(0, unit(0, 0.5))], [(1, unit(1, 0.5))]])
    q = unit(0, 0.5) + unit(1, 0.2)
    assert len(match_descriptors([[0, 0]], q, v, ratio_max=0.8)) == 1
    assert match_descriptors([[0, 0]], q, v, ratio_max=0.3) == []
    assert match_descriptors([[0, 0]], q, v, dist_max=0.1) == []


def test_single_word_vocabulary_rejected():
    v = vocab_with([[(0, unit(0, 0.5))]])
    with pytest.raises(VocabularyTooSmall):
        match_descriptors([[0, 0]], unit(0, 0.5), v)


def test_order_and_thread_independence():
    rng = np.random.default_rng(0)
    k = 6
    entries = [[(int(rng.integers(20)), unit(w, 0.5) + rng.random(DESCRIPTOR_DIM) * 0.01)
                for _ in range(4)] for w in range(k)]
    v = vocab_with(entries)
    queries = np.stack([unit(int(w), 0.5) for w in rng.integers(k, size=300)])
    pix = rng.random((300, 2)) * 100
    a = match_descriptors(pix, queries, v, threads=1)
    b = match_descriptors(pix, queries, v, threads=4)
    assert a == b and len(a) > 0
    assert [c.query for c in a] == sorted(c.query for c in a)
