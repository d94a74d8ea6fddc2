"""Lloyd k-means with k-means++ seeding, deterministic for a given seed."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import TooFewPoints
from ..parallel import map_chunks
from ..rng import Xoshiro256
from .kdtree import squared_distances

log = logging.getLogger(__name__)

# upper bound on the n x k scratch matrix per chunk (elements)
_CHUNK_ELEMENTS = 1 << 22


@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    inertia_history: list[float]
    reseeded: int = 0


def _assign_chunk(X, C, c_norm, lo, hi):
    """Exact nearest centroid for rows lo:hi.

    A BLAS pass with the expanded formula shortlists candidates; every
    candidate within a rounding margin of the shortlist minimum is then
    re-scored with the exact difference formula, ties to the lowest id.
    """
    x = X[lo:hi]
    x_norm = np.einsum("ij,ij->i", x, x)
    approx = x_norm[:, None] - 2.0 * (x @ C.T) + c_norm[None, :]
    amin = approx.min(axis=1)
    margin = 1e-9 * (x_norm + c_norm.max()) + 1e-300
    cand = approx <= (amin + margin)[:, None]
    n_cand = cand.sum(axis=1)
    labels = np.argmax(cand, axis=1)
    d2 = np.empty(hi - lo)
    single = n_cand == 1
    if single.any():
        rows = np.flatnonzero(single)
        diff = x[rows] - C[labels[rows]]
        d2[rows] = (diff * diff).sum(axis=1)
    for r in np.flatnonzero(~single):
        ids = np.flatnonzero(cand[r])
        dd = squared_distances(C[ids], x[r])
        j = int(np.argmin(dd))  # first minimum = lowest id among exact ties
        labels[r] = ids[j]
        d2[r] = dd[j]
    return labels, d2


def assign(X: np.ndarray, C: np.ndarray, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid labels and squared distances (ties to the lowest centroid id)."""
    c_norm = np.einsum("ij,ij->i", C, C)
    rows = max(1, _CHUNK_ELEMENTS // max(1, len(C)))
    parts = map_chunks(lambda lo, hi: _assign_chunk(X, C, c_norm, lo, hi), len(X), rows, threads)
    labels = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, dtype=np.int64)
    d2 = np.concatenate([p[1] for p in parts]) if parts else np.empty(0)
    return labels.astype(np.int64), d2


def kmeans_plus_plus(X: np.ndarray, k: int, rng: Xoshiro256) -> np.ndarray:
    """k-means++ seeding; returns the chosen row indices."""
    n = len(X)
    chosen = [rng.below(n)]
    d2 = squared_distances(X, X[chosen[0]])
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            cdf = np.cumsum(d2)
            pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            pick = min(pick, n - 1)
            while d2[pick] == 0.0:  # guard against landing on a zero-weight row
                pick -= 1
        else:
            # every remaining row duplicates a chosen centre
            pick = int(np.flatnonzero(~taken)[0])
        chosen.append(pick)
        taken[pick] = True
        d2 = np.minimum(d2, squared_distances(X, X[pick]))
    return np.array(chosen, dtype=np.int64)


def _update(X, labels, d2, C_old, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(C_old)
    np.add.at(sums, labels, X)
    C = C_old.copy()
    nz = counts > 0
    C[nz] = sums[nz] / counts[nz, None]
    empty = np.flatnonzero(~nz)
    if empty.size:
        # farthest descriptors from their current centroid, ties to lower row
        order = np.lexsort((np.arange(len(X)), -d2))
        for c, row in zip(empty, order[: empty.size]):
            C[c] = X[row]
    return C, int(empty.size)


def kmeans(
    descriptors: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-8,
    threads: int = 1,
) -> KmeansResult:
    """Cluster rows of ``descriptors`` into ``k`` groups.

    Stops once no centroid moves more than ``tol`` or after ``max_iters``
    update steps. Empty clusters are re-seeded at the rows farthest from their
    assigned centroid. The returned assignments are computed against the
    returned centroids.
    """
    X = np.ascontiguousarray(descriptors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("descriptors must be a 2-D array")
    n = len(X)
    if k < 1 or n < k:
        raise TooFewPoints(f"need at least k={k} descriptors, got {n}")

    rng = Xoshiro256(seed)
    C = X[kmeans_plus_plus(X, k, rng)].copy()
    labels, d2 = assign(X, C, threads)
    history = [float(d2.sum())]
    reseeded = 0
    it = 0
    while it < max_iters:
        it += 1
        C_new, n_empty = _update(X, labels, d2, C, k)
        reseeded += n_empty
        shift = float(np.sqrt(((C_new - C) ** 2).sum(axis=1).max()))
        C = C_new
        labels, d2 = assign(X, C, threads)
        history.append(float(d2.sum()))
        if shift <= tol and np.bincount(labels, minlength=k).min() > 0:
            break
    log.debug("kmeans k=%d n=%d iterations=%d inertia=%g", k, n, it, history[-1])
    return KmeansResult(C, labels, history[-1], it, history, reseeded)
