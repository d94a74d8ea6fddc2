"""Exact k-d tree nearest-neighbour search.

Nodes split on the dimension of largest variance at the median. Leaves hold
small buckets scanned with numpy. Search backtracks exactly: a subtree is
skipped only when its splitting-plane distance strictly exceeds the current
worst kept distance, so equal-distance points with lower ids are never lost.
"""
from __future__ import annotations

import numpy as np

from ..errors import CountExceedsVocabulary

DEFAULT_LEAF_SIZE = 32


def squared_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise squared Euclidean distances; the one formula used for all exact comparisons."""
    diff = points - q
    return (diff * diff).sum(axis=1)


class KDTree:
    """Static k-d tree over the rows of ``data``.

    Node arrays are flat; node ``i`` is a leaf when ``split_dim[i] < 0`` and
    then owns ``order[start[i]:end[i]]``.
    """

    def __init__(self, data: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if self.data.ndim != 2 or len(self.data) == 0:
            raise ValueError("KDTree needs a non-empty 2-D array")
        self.leaf_size = max(1, int(leaf_size))
        self.size, self.dim = self.data.shape
        self.order = np.arange(self.size)
        split_dim, split_val, left, right, start, end = [], [], [], [], [], []

        def build(lo: int, hi: int) -> int:
            node = len(split_dim)
            split_dim.append(-1)
            split_val.append(0.0)
            left.append(-1)
            right.append(-1)
            start.append(lo)
            end.append(hi)
            if hi - lo <= self.leaf_size:
                return node
            idx = self.order[lo:hi]
            pts = self.data[idx]
            var = pts.var(axis=0)
            d = int(np.argmax(var))
            if var[d] == 0.0:
                return node  # all points identical: keep as one leaf
            perm = np.argsort(pts[:, d], kind="stable")
            self.order[lo:hi] = idx[perm]
            mid = lo + (hi - lo) // 2
            split_dim[node] = d
            split_val[node] = float(self.data[self.order[mid], d])
            left[node] = build(lo, mid)
            right[node] = build(mid, hi)
            return node

        build(0, self.size)
        self.split_dim = np.array(split_dim)
        self.split_val = np.array(split_val)
        self.left = np.array(left)
        self.right = np.array(right)
        self.start = np.array(start)
        self.end = np.array(end)
        # per-leaf contiguous copies make the bucket scan cache friendly
        self._leaf_data = {}
        for node in np.flatnonzero(self.split_dim < 0):
            ids = self.order[self.start[node]:self.end[node]]
            self._leaf_data[int(node)] = (ids, self.data[ids])

    def query(self, q: np.ndarray, count: int = 2) -> list[tuple[int, float]]:
        """``count`` nearest rows as ``(index, squared_distance)``, ascending, ties to lower index."""
        if count > self.size:
            raise CountExceedsVocabulary(f"asked for {count} neighbours of {self.size}")
        if count < 1:
            return []
        q = np.asarray(q, dtype=np.float64)
        best: list[tuple[float, int]] = []
        worst = np.inf
        split_dim, split_val = self.split_dim, self.split_val
        left, right = self.left, self.right
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if bound > worst:
                continue
            while split_dim[node] >= 0:
                d = split_dim[node]
                diff = q[d] - split_val[node]
                if diff < 0:
                    near, far = left[node], right[node]
                else:
                    near, far = right[node], left[node]
                stack.append((far, diff * diff))
                node = near
            ids, pts = self._leaf_data[int(node)]
            d2 = squared_distances(pts, q)
            if len(best) == count:
                keep = d2 <= worst
                if not keep.any():
                    continue
                cand = list(zip(d2[keep].tolist(), ids[keep].tolist()))
            else:
                cand = list(zip(d2.tolist(), ids.tolist()))
            best = sorted(best + cand)[:count]
            if len(best) == count:
                worst = best[-1][0]
        return [(i, d) for d, i in best]

    def query_many(self, queries: np.ndarray, count: int = 2) -> tuple[np.ndarray, np.ndarray]:
        """Batch version of :meth:`query`: ``(indices, squared_distances)`` arrays."""
        queries = np.atleast_2d(queries)
        idx = np.empty((len(queries), count), dtype=np.int64)
        dist = np.empty((len(queries), count), dtype=np.float64)
        for r, q in enumerate(queries):
            res = self.query(q, count)
            idx[r] = [i for i, _ in res]
            dist[r] = [d for _, d in res]
        return idx, dist


def knn(index: KDTree, query: np.ndarray, count: int = 2) -> list[tuple[int, float]]:
    """Exact ``count`` nearest words of ``query`` as ``(word_id, squared_distance)``."""
    return index.query(query, count)
