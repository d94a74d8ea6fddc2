"""Visual vocabulary: k-means words over point descriptors plus an inverted file.

Each word keeps the list of descriptor entries that quantize to it, as
``(point_id, descriptor)`` pairs, and the vocabulary carries the xyz table of
the cloud, so 2D-3D matching needs nothing besides the vocabulary file.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..descriptors import DESCRIPTOR_DIM, dequantize, quantize
from ..errors import IoFailure, MalformedHeader, NoDescriptors, TruncatedPayload
from ..parallel import map_chunks
from .kdtree import KDTree
from .kmeans import KmeansResult, kmeans
from .ply import PointCloud

VOCAB_MAGIC = b"HFV1"
DEFAULT_WORDS = 100_000
_HEAD = struct.Struct("<4sIIII")


def default_word_count(n_descriptors: int, k: int = DEFAULT_WORDS) -> int:
    """Word count for a cloud of ``n_descriptors``.

    The campus-scale default of 100,000 scales down to ``n // 4`` on small
    clouds; any other requested ``k`` is kept, capped at ``n``. At least 1.
    """
    if k == DEFAULT_WORDS:
        return max(1, min(k, n_descriptors // 4))
    return max(1, min(k, n_descriptors))


@dataclass
class VisualVocabulary:
    centroids: np.ndarray
    word_offsets: np.ndarray  # (k + 1,) CSR offsets into the entry arrays
    entry_point_ids: np.ndarray
    entry_descriptors: np.ndarray
    points: np.ndarray  # (n_points, 3) xyz looked up by point id
    index: KDTree = field(init=False, repr=False)
    kmeans_result: KmeansResult | None = field(default=None, repr=False)

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        self.index = KDTree(self.centroids)

    @property
    def k(self) -> int:
        return len(self.centroids)

    def word_to_points(self, word: int) -> np.ndarray:
        return self.entry_point_ids[self.word_offsets[word]:self.word_offsets[word + 1]]

    def word_entries(self, word: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.word_offsets[word], self.word_offsets[word + 1]
        return self.entry_point_ids[lo:hi], self.entry_descriptors[lo:hi]

    def quantize(self, descriptors: np.ndarray, threads: int = 1) -> np.ndarray:
        """Word id of each descriptor (exact nearest centroid, ties to the lower id)."""
        descriptors = np.atleast_2d(descriptors)
        parts = map_chunks(
            lambda lo, hi: self.index.query_many(descriptors[lo:hi], 1)[0][:, 0],
            len(descriptors), 256, threads,
        )
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def _inverted_file(words: np.ndarray, k: int):
    order = np.argsort(words, kind="stable")
    offsets = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(np.bincount(words, minlength=k), out=offsets[1:])
    return order, offsets


def build_vocabulary(
    cloud: PointCloud,
    k: int | None = None,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-8,
    threads: int = 1,
) -> VisualVocabulary:
    """Cluster the cloud's descriptors and index points by visual word."""
    if not cloud.has_descriptors:
        raise NoDescriptors("point cloud carries no descriptors")
    X = cloud.descriptors
    if k is None:
        k = default_word_count(len(X))
    km = kmeans(X, k, seed=seed, max_iters=max_iters, tol=tol, threads=threads)
    vocab = VisualVocabulary(
        km.centroids, np.zeros(k + 1, dtype=np.int64), np.empty(0, np.int64),
        np.empty((0, X.shape[1])), cloud.points, kmeans_result=km,
    )
    words = vocab.quantize(X, threads)
    order, offsets = _inverted_file(words, k)
    vocab.word_offsets = offsets
    vocab.entry_point_ids = cloud.descriptor_point_ids[order]
    vocab.entry_descriptors = X[order]
    return vocab


def cluster_xyz(cloud: PointCloud, k: int, seed: int = 0, max_iters: int = 100,
                threads: int = 1) -> KmeansResult:
    """k-means over point coordinates instead of descriptors.

    Diagnostic only: xyz centroids cannot serve as visual words, since query
    descriptors live in descriptor space.
    """
    return kmeans(cloud.points, k, seed=seed, max_iters=max_iters, threads=threads)


# --------------------------------------------------------------------------
# HFV1 file
#
#   magic "HFV1", u32 k, u32 dim, u32 n_points, u32 n_entries
#   k*dim f32 centroids
#   (k+1) u32 word offsets
#   n_entries u32 point ids, n_entries*dim u8 descriptors (x512)
#   n_points*3 f64 xyz

def encode_vocabulary(vocab: VisualVocabulary) -> bytes:
    k, dim = vocab.centroids.shape
    n_entries = len(vocab.entry_point_ids)
    parts = [
        _HEAD.pack(VOCAB_MAGIC, k, dim, len(vocab.points), n_entries),
        vocab.centroids.astype("<f4").tobytes(),
        vocab.word_offsets.astype("<u4").tobytes(),
        vocab.entry_point_ids.astype("<u4").tobytes(),
        quantize(vocab.entry_descriptors).tobytes(),
        np.asarray(vocab.points, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def decode_vocabulary(data: bytes) -> VisualVocabulary:
    if len(data) < _HEAD.size or data[:4] != VOCAB_MAGIC:
        raise MalformedHeader("vocabulary file lacks HFV1 magic")
    _, k, dim, n_points, n_entries = _HEAD.unpack_from(data)
    if k < 1 or dim != DESCRIPTOR_DIM:
        raise MalformedHeader(f"vocabulary header k={k} dim={dim} unsupported")
    sizes = [k * dim * 4, (k + 1) * 4, n_entries * 4, n_entries * dim, n_points * 24]
    if len(data) != _HEAD.size + sum(sizes):
        raise TruncatedPayload(f"vocabulary file is {len(data)} bytes, expected {_HEAD.size + sum(sizes)}")
    pos = _HEAD.size
    chunks = []
    for size in sizes:
        chunks.append(data[pos:pos + size])
        pos += size
    centroids = np.frombuffer(chunks[0], "<f4").reshape(k, dim).astype(np.float64)
    offsets = np.frombuffer(chunks[1], "<u4").astype(np.int64)
    ids = np.frombuffer(chunks[2], "<u4").astype(np.int64)
    desc = dequantize(np.frombuffer(chunks[3], np.uint8).reshape(n_entries, dim))
    pts = np.frombuffer(chunks[4], "<f8").reshape(n_points, 3).copy()
    if offsets[0] != 0 or offsets[-1] != n_entries or np.any(np.diff(offsets) < 0):
        raise MalformedHeader("vocabulary word offsets are inconsistent")
    if n_entries and ids.max() >= n_points:
        raise MalformedHeader("vocabulary references a point id beyond the point table")
    return VisualVocabulary(centroids, offsets, ids, desc, pts)


def write_vocabulary(vocab: VisualVocabulary, path: str | Path) -> None:
    try:
        Path(path).write_bytes(encode_vocabulary(vocab))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_vocabulary(path: str | Path) -> VisualVocabulary:
    try:
        return decode_vocabulary(Path(path).read_bytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
