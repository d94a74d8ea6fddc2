"""Attach cube spectra to cloud points, by projection or by shared georeferencing.

Pixel convention used throughout: integer ``(u, v)`` = (sample, line) is the
centre of a pixel, so a continuous coordinate maps to the pixel obtained by
rounding half away from zero.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud.ply import PointCloud, encode_ply, read_ply_vertices
from .cube_io import HyperCube, Units
from .errors import (IoFailure, MalformedHeader, ModelNotAccepted, NonInvertibleGeoTransform,
                     TruncatedPayload, UnitsMismatch)
from .registration.dlt import ProjectionModel

SPECTRA_MAGIC = b"HFS1"
SUMMARY_BANDS_NM = {"red": 640.0, "green": 550.0, "nir": 800.0}
DEFAULT_Z_TOLERANCE = 0.2


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Nearest integer, halves away from zero; inputs are first snapped to 1e-9."""
    x = np.round(np.asarray(x, dtype=np.float64), 9)
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


@dataclass(frozen=True)
class GeoRef:
    """Affine map from pixel centre (u, v) to world (X, Y).

    ``X = origin_x + u * pixel_dx + v * rot_x``
    ``Y = origin_y + u * rot_y + v * pixel_dy``
    """

    origin_x: float
    origin_y: float
    pixel_dx: float
    pixel_dy: float
    rot_x: float = 0.0
    rot_y: float = 0.0

    def __post_init__(self):
        if self.pixel_dx == 0 or self.pixel_dy == 0:
            raise NonInvertibleGeoTransform("pixel_dx and pixel_dy must be non-zero")
        det = self.pixel_dx * self.pixel_dy - self.rot_x * self.rot_y
        if not np.isfinite(det) or det == 0:
            raise NonInvertibleGeoTransform("geotransform matrix is singular")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.pixel_dx, self.rot_x], [self.rot_y, self.pixel_dy]])

    def pixel_to_world(self, uv: np.ndarray) -> np.ndarray:
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        return uv @ self.matrix.T + [self.origin_x, self.origin_y]

    def world_to_pixel(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        return np.linalg.solve(self.matrix, (xy - [self.origin_x, self.origin_y]).T).T

    @classmethod
    def from_dict(cls, d: dict) -> "GeoRef":
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def read(cls, path: str | Path) -> "GeoRef":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        try:
            return cls.from_dict(doc)
        except TypeError as exc:
            raise MalformedHeader(f"bad georef document: {exc}") from None


@dataclass
class FusedCloud:
    """Cloud geometry plus, per point, its source pixel and spectrum row.

    ``pixel`` is (-1, -1) and ``spectrum_index`` is -1 for points without a
    spectrum. ``spectra`` holds one float32 row per fused point, in point order.
    """

    points: np.ndarray
    pixel: np.ndarray
    spectrum_index: np.ndarray
    occluded: np.ndarray
    spectra: np.ndarray
    wavelengths: np.ndarray

    def __post_init__(self):
        n = len(self.points)
        fused = self.spectrum_index >= 0
        if not (len(self.pixel) == len(self.spectrum_index) == len(self.occluded) == n):
            raise MalformedHeader("fused arrays do not align with the points")
        if int(fused.sum()) != len(self.spectra):
            raise MalformedHeader("spectra rows do not match the number of fused points")
        if np.any(self.pixel[fused] < 0):
            raise MalformedHeader("fused point without a source pixel")

    @property
    def fused_ids(self) -> np.ndarray:
        return np.flatnonzero(self.spectrum_index >= 0)

    def spectrum(self, point_id: int) -> np.ndarray | None:
        r = self.spectrum_index[point_id]
        return None if r < 0 else self.spectra[r]


def _require_reflectance(cube: HyperCube) -> None:
    if cube.units is not Units.Reflectance:
        raise UnitsMismatch("fusion needs a reflectance cube; calibrate it first")


def _assemble(points, cube: HyperCube, pix: np.ndarray, fused: np.ndarray, occluded) -> FusedCloud:
    n = len(points)
    pixel = np.full((n, 2), -1, dtype=np.int64)
    pixel[fused] = pix[fused]
    index = np.full(n, -1, dtype=np.int64)
    index[fused] = np.arange(int(fused.sum()))
    spectra = cube.values[pixel[fused, 1], pixel[fused, 0], :].astype(np.float32)
    return FusedCloud(np.array(points, dtype=np.float64), pixel, index, occluded, spectra,
                      np.asarray(cube.wavelengths, dtype=np.float64))


def _inside(pix: np.ndarray, cube: HyperCube) -> np.ndarray:
    lines, samples, _ = cube.shape
    return (pix[:, 0] >= 0) & (pix[:, 0] < samples) & (pix[:, 1] >= 0) & (pix[:, 1] < lines)


def fuse_projective(
    cloud: PointCloud,
    cube: HyperCube,
    model: ProjectionModel,
    z_tolerance: float = DEFAULT_Z_TOLERANCE,
    accepted: bool = True,
) -> FusedCloud:
    """Project every point through ``model`` and take its pixel's spectrum.

    A depth buffer at cube resolution keeps, per pixel, the nearest depth;
    points farther than ``z_tolerance`` behind it are flagged occluded.
    """
    if not accepted:
        raise ModelNotAccepted("registration was not accepted; refusing to fuse")
    _require_reflectance(cube)
    pts = cloud.points
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = model.project(pts)
    depth = model.depth(pts)
    ok = np.isfinite(uv).all(axis=1) & model.in_front(pts)
    pix = np.zeros((len(pts), 2), dtype=np.int64)
    pix[ok] = round_half_away(uv[ok]).astype(np.int64)
    visible = ok & _inside(pix, cube)

    lines, samples, _ = cube.shape
    flat = pix[:, 1] * samples + pix[:, 0]
    zbuf = np.full(lines * samples, np.inf)
    np.minimum.at(zbuf, flat[visible], depth[visible])  # order-free, so any split merges identically
    fused = visible.copy()
    fused[visible] = depth[visible] <= zbuf[flat[visible]] + z_tolerance
    occluded = visible & ~fused
    return _assemble(pts, cube, pix, fused, occluded)


def fuse_georef(cloud: PointCloud, cube: HyperCube, geo: GeoRef) -> FusedCloud:
    """Nearest-pixel lookup through the inverse geotransform (nadir, no occlusion test)."""
    _require_reflectance(cube)
    pts = cloud.points
    uv = geo.world_to_pixel(pts[:, :2]) if len(pts) else np.zeros((0, 2))
    pix = round_half_away(uv).astype(np.int64)
    fused = _inside(pix, cube)
    return _assemble(pts, cube, pix, fused, np.zeros(len(pts), dtype=bool))


# --------------------------------------------------------------------------
# export

def _summary_band(wavelengths: np.ndarray, target: float) -> int:
    # clamped nearest band, ties to the lower index
    return int(np.argmin(np.abs(wavelengths - target)))


def fused_vertices(fused: FusedCloud) -> np.ndarray:
    dtype = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("u", "<i4"), ("v", "<i4"),
                      ("red", "u1"), ("green", "u1"), ("nir", "u1"), ("occluded", "u1")])
    v = np.zeros(len(fused.points), dtype=dtype)
    v["x"], v["y"], v["z"] = fused.points.T
    v["u"], v["v"] = fused.pixel.T
    ids = fused.fused_ids
    for name, nm in SUMMARY_BANDS_NM.items():
        if len(fused.wavelengths) == 0:
            break
        b = _summary_band(fused.wavelengths, nm)
        refl = fused.spectra[:, b].astype(np.float64)
        v[name][ids] = np.clip(np.rint(refl * 255.0), 0, 255).astype(np.uint8)
    v["occluded"] = fused.occluded
    return v


def encode_spectra_block(fused: FusedCloud) -> bytes:
    bands = len(fused.wavelengths)
    rec = np.zeros(len(fused.spectra), dtype=[("point_id", "<u4"), ("spectrum", "<f4", (bands,))])
    rec["point_id"] = fused.fused_ids
    rec["spectrum"] = fused.spectra
    return SPECTRA_MAGIC + rec.tobytes()


def decode_spectra_block(data: bytes, bands: int) -> tuple[np.ndarray, np.ndarray]:
    """``(point_ids, spectra)`` from an HFS1 block with ``bands`` values per record."""
    if data[:4] != SPECTRA_MAGIC:
        raise MalformedHeader("spectra block lacks HFS1 magic")
    size = 4 + 4 * bands
    if (len(data) - 4) % size:
        raise TruncatedPayload(f"spectra block body of {len(data) - 4} bytes is not a multiple of {size}")
    rec = np.frombuffer(data, dtype=[("point_id", "<u4"), ("spectrum", "<f4", (bands,))], offset=4)
    return rec["point_id"].astype(np.int64), rec["spectrum"].copy()


@dataclass(frozen=True)
class FusedPaths:
    ply: Path
    spectra: Path

    @classmethod
    def for_stem(cls, stem: str | Path) -> "FusedPaths":
        stem = Path(stem)
        return cls(stem.with_suffix(".ply"), stem.with_suffix(".hfs"))


def export_fused(fused: FusedCloud, paths: FusedPaths, fmt: str = "binary_little_endian") -> None:
    """Write the fused PLY and its HFS1 spectra block."""
    try:
        paths.ply.write_bytes(encode_ply(fused_vertices(fused), fmt))
        paths.spectra.write_bytes(encode_spectra_block(fused))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_fused(paths: FusedPaths, wavelengths) -> FusedCloud:
    """Rebuild a :class:`FusedCloud` from an exported PLY and spectra block."""
    wavelengths = np.asarray(wavelengths, dtype=np.float64)
    try:
        ply = paths.ply.read_bytes()
        block = paths.spectra.read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    v = read_ply_vertices(ply)
    ids, spectra = decode_spectra_block(block, len(wavelengths))
    n = len(v)
    if np.any(ids >= n) or np.any(np.diff(ids) <= 0):
        raise MalformedHeader("spectra block point ids are not increasing ids of the PLY")
    index = np.full(n, -1, dtype=np.int64)
    index[ids] = np.arange(len(ids))
    points = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    pixel = np.stack([v["u"], v["v"]], axis=1).astype(np.int64)
    occluded = v["occluded"].astype(bool) if "occluded" in v.dtype.names else np.zeros(n, bool)
    return FusedCloud(points, pixel, index, occluded, spectra, wavelengths)
