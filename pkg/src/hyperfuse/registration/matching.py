"""2D-3D correspondences from cube descriptors and visual words."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cloud.kdtree import squared_distances
from ..cloud.vocabulary import VisualVocabulary
from ..errors import VocabularyTooSmall
from ..parallel import map_chunks


@dataclass(frozen=True)
class Correspondence:
    pixel: tuple[float, float]  # (x = sample, y = line)
    point_id: int
    xyz: tuple[float, float, float]
    word: int
    distance_ratio: float
    descriptor_distance: float
    query: int = -1


def match_descriptors(
    pixels: np.ndarray,
    descriptors: np.ndarray,
    vocab: VisualVocabulary,
    ratio_max: float = 0.8,
    dist_max: float = 1.0,
    per_query_limit: int = 5,
    threads: int = 1,
) -> list[Correspondence]:
    """Ratio-tested word lookup followed by a linear scan inside the word.

    A query survives when ``d1 / d2 < ratio_max`` and ``d1 < dist_max`` for
    its two nearest words (Euclidean). Its word's entries are then ranked by
    descriptor distance to the query (ties: lower point id, then entry order)
    and up to ``per_query_limit`` distinct points are emitted. Output is
    ordered by query index, then rank.
    """
    if vocab.k < 2:
        raise VocabularyTooSmall(f"ratio test needs at least 2 words, vocabulary has {vocab.k}")
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    descriptors = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    if len(descriptors) == 0:
        return []
    parts = map_chunks(
        lambda lo, hi: vocab.index.query_many(descriptors[lo:hi], 2), len(descriptors), 128, threads
    )
    words = np.concatenate([p[0] for p in parts])
    d2 = np.concatenate([p[1] for p in parts])

    out: list[Correspondence] = []
    for q in range(len(descriptors)):
        d1, dd2 = np.sqrt(d2[q, 0]), np.sqrt(d2[q, 1])
        ratio = d1 / dd2 if dd2 > 0 else 1.0
        if not (ratio < ratio_max and d1 < dist_max):
            continue
        w = int(words[q, 0])
        ids, ent = vocab.word_entries(w)
        if len(ids) == 0:
            continue
        dist = squared_distances(ent, descriptors[q])
        order = np.lexsort((np.arange(len(ids)), ids, dist))
        seen = set()
        for e in order:
            pid = int(ids[e])
            if pid in seen:
                continue
            seen.add(pid)
            out.append(Correspondence(
                pixel=(float(pixels[q, 0]), float(pixels[q, 1])),
                point_id=pid,
                xyz=tuple(float(v) for v in vocab.points[pid]),
                word=w,
                distance_ratio=float(ratio),
                descriptor_distance=float(d1),
                query=q,
            ))
            if len(seen) >= per_query_limit:
                break
    return out
