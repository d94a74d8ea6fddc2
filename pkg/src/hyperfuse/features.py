"""Difference-of-Gaussians keypoints and 128-d gradient histogram descriptors.

A self-contained SIFT-style pipeline run on the grayscale of a cube's RGB
composite. Gaussian blurs come from ``scipy.ndimage``; everything else
(extrema, refinement, orientation, descriptor layout) is implemented here.
Images are processed in float64 on a [0, 1] intensity scale.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .cube_io import BandImage
from .descriptors import DESCRIPTOR_DIM, dequantize, quantize
from .errors import ImageTooSmall, IoFailure, MalformedHeader, TruncatedPayload

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"HFF1"
MIN_IMAGE_SIZE = 32
# gradients below this (on the [0, 1] intensity scale) count as zero
_FLAT_GRADIENT = 1e-9


@dataclass(frozen=True)
class SiftConfig:
    sigma0: float = 1.6
    scales_per_octave: int = 3
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    assumed_blur: float = 0.5
    double_image: bool = True
    border: int = 5
    max_refine_steps: int = 5
    orientation_bins: int = 36
    orientation_peak_ratio: float = 0.8
    descriptor_width: int = 4
    descriptor_bins: int = 8
    descriptor_clip: float = 0.2
    min_octave_size: int = 12


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float
    octave: int = 0
    layer: int = 0

    def sort_key(self):
        return (self.octave, self.y, self.x, self.scale, self.orientation)


@dataclass
class FeatureSet:
    """Keypoint geometry and descriptors at on-disk precision."""

    xy: np.ndarray  # (n, 2) float, x = sample, y = line
    scale: np.ndarray
    orientation: np.ndarray
    descriptors: np.ndarray  # (n, 128) float, multiples of 1/512
    dropped: int = 0
    keypoints: list[Keypoint] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.xy)


# --------------------------------------------------------------------------
# Scale space

@dataclass
class _Octave:
    index: int
    gauss: list[np.ndarray]
    dog: np.ndarray  # (s + 2, H, W)
    sigmas: np.ndarray  # absolute blur of each Gaussian level, octave pixel units


def _prepare(image) -> np.ndarray:
    if isinstance(image, BandImage):
        g = image.to_gray()
    else:
        g = np.asarray(image, dtype=np.float64)
        if g.ndim == 3:
            g = BandImage(g).to_gray()
    return g / 255.0


def _build_pyramid(img: np.ndarray, cfg: SiftConfig) -> tuple[list[_Octave], float]:
    s = cfg.scales_per_octave
    k = 2.0 ** (1.0 / s)
    if cfg.double_image:
        base = ndimage.zoom(img, 2, order=1, mode="nearest", grid_mode=False)
        have, factor = 2 * cfg.assumed_blur, 0.5
    else:
        base, have, factor = img, cfg.assumed_blur, 1.0
    base = ndimage.gaussian_filter(base, np.sqrt(max(cfg.sigma0**2 - have**2, 0.01)), mode="mirror")

    sig = cfg.sigma0 * k ** np.arange(s + 3)
    increments = np.sqrt(sig[1:] ** 2 - sig[:-1] ** 2)
    octaves = []
    o = 0
    while min(base.shape) >= cfg.min_octave_size:
        gauss = [base]
        for inc in increments:
            gauss.append(ndimage.gaussian_filter(gauss[-1], inc, mode="mirror"))
        dog = np.stack([b - a for a, b in zip(gauss, gauss[1:])])
        octaves.append(_Octave(o, gauss, dog, sig))
        base = gauss[s][::2, ::2]
        o += 1
    return octaves, factor


# --------------------------------------------------------------------------
# Detection

def _derivatives(dog, l, y, x):
    c = dog[l, y, x]
    dx = 0.5 * (dog[l, y, x + 1] - dog[l, y, x - 1])
    dy = 0.5 * (dog[l, y + 1, x] - dog[l, y - 1, x])
    ds = 0.5 * (dog[l + 1, y, x] - dog[l - 1, y, x])
    dxx = dog[l, y, x + 1] - 2 * c + dog[l, y, x - 1]
    dyy = dog[l, y + 1, x] - 2 * c + dog[l, y - 1, x]
    dss = dog[l + 1, y, x] - 2 * c + dog[l - 1, y, x]
    dxy = 0.25 * (dog[l, y + 1, x + 1] - dog[l, y + 1, x - 1] - dog[l, y - 1, x + 1] + dog[l, y - 1, x - 1])
    dxs = 0.25 * (dog[l + 1, y, x + 1] - dog[l + 1, y, x - 1] - dog[l - 1, y, x + 1] + dog[l - 1, y, x - 1])
    dys = 0.25 * (dog[l + 1, y + 1, x] - dog[l + 1, y - 1, x] - dog[l - 1, y + 1, x] + dog[l - 1, y - 1, x])
    grad = np.array([dx, dy, ds])
    hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return grad, hess


def _refine(oct_: _Octave, l, y, x, cfg: SiftConfig):
    """Quadratic sub-pixel refinement; returns (l, y, x, offset, value) or None."""
    dog = oct_.dog
    _, H, W = dog.shape
    b = cfg.border
    for _ in range(cfg.max_refine_steps):
        grad, hess = _derivatives(dog, l, y, x)
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            break
        x += int(np.rint(offset[0]))
        y += int(np.rint(offset[1]))
        l += int(np.rint(offset[2]))
        if not (b <= x < W - b and b <= y < H - b and 1 <= l <= cfg.scales_per_octave):
            return None
    else:
        return None
    value = dog[l, y, x] + 0.5 * grad @ offset
    if abs(value) < cfg.contrast_threshold:
        return None
    tr = hess[0, 0] + hess[1, 1]
    det = hess[0, 0] * hess[1, 1] - hess[0, 1] ** 2
    r = cfg.edge_ratio
    if det <= 0 or tr * tr * r >= (r + 1) ** 2 * det:
        return None
    return l, y, x, offset, value


def _orientations(gauss: np.ndarray, x: float, y: float, sigma: float, cfg: SiftConfig) -> list[float]:
    """Dominant gradient directions (radians, image frame with y down)."""
    H, W = gauss.shape
    sw = 1.5 * sigma
    radius = int(np.rint(3 * sw))
    cx, cy = int(np.rint(x)), int(np.rint(y))
    ys, xs = np.mgrid[cy - radius:cy + radius + 1, cx - radius:cx + radius + 1]
    ok = (xs > 0) & (xs < W - 1) & (ys > 0) & (ys < H - 1)
    xs, ys = xs[ok], ys[ok]
    dx = gauss[ys, xs + 1] - gauss[ys, xs - 1]
    dy = gauss[ys + 1, xs] - gauss[ys - 1, xs]
    if not len(dx) or max(np.abs(dx).max(), np.abs(dy).max()) <= _FLAT_GRADIENT:
        return None  # flat window: only rounding noise left in the gradients
    mag = np.hypot(dx, dy)
    ang = np.arctan2(dy, dx)
    w = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sw * sw))
    n = cfg.orientation_bins
    bins = np.floor(ang * n / (2 * np.pi)).astype(int) % n
    hist = np.bincount(bins, weights=w * mag, minlength=n)
    smooth = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1)) + np.roll(hist, 2) + np.roll(hist, -2)) / 16.0
    peak = smooth.max()
    if peak <= 0:
        return []
    out = []
    left, right = np.roll(smooth, 1), np.roll(smooth, -1)
    for i in np.flatnonzero((smooth > left) & (smooth > right) & (smooth >= cfg.orientation_peak_ratio * peak)):
        denom = left[i] - 2 * smooth[i] + right[i]
        frac = 0.5 * (left[i] - right[i]) / denom if denom != 0 else 0.0
        theta = ((i + 0.5 + frac) * 2 * np.pi / n) % (2 * np.pi)
        out.append(float(theta))
    return out


def _check_size(img: np.ndarray) -> None:
    if min(img.shape[:2]) < MIN_IMAGE_SIZE:
        raise ImageTooSmall(f"image {img.shape[1]}x{img.shape[0]} is below {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}")


def detect_keypoints(image, config: SiftConfig = SiftConfig()) -> list[Keypoint]:
    """DoG extrema with sub-pixel refinement, contrast and edge rejection, orientations.

    Coordinates and scales are in input-image pixels. Output order is
    canonical (octave, y, x, scale, orientation).
    """
    img = _prepare(image)
    _check_size(img)
    octaves, factor = _build_pyramid(img, config)
    s = config.scales_per_octave
    prefilter = 0.5 * config.contrast_threshold
    keypoints = set()
    for oct_ in octaves:
        dog = oct_.dog
        _, H, W = dog.shape
        b = config.border
        if H <= 2 * b or W <= 2 * b:
            continue
        mx = ndimage.maximum_filter(dog, size=3, mode="nearest")
        mn = ndimage.minimum_filter(dog, size=3, mode="nearest")
        cand = ((dog == mx) | (dog == mn)) & (np.abs(dog) > prefilter)
        cand[0] = cand[-1] = False
        cand[:, :b] = cand[:, H - b:] = False
        cand[:, :, :b] = cand[:, :, W - b:] = False
        for l, y, x in zip(*np.nonzero(cand)):
            res = _refine(oct_, int(l), int(y), int(x), config)
            if res is None:
                continue
            l2, y2, x2, off, value = res
            sigma_oct = config.sigma0 * 2.0 ** ((l2 + off[2]) / s)
            xo, yo = x2 + off[0], y2 + off[1]
            unit = factor * 2.0 ** oct_.index
            for theta in _orientations(oct_.gauss[l2], xo, yo, sigma_oct, config):
                keypoints.add(Keypoint(
                    x=float(xo * unit), y=float(yo * unit), scale=float(sigma_oct * unit),
                    orientation=theta, response=float(abs(value)),
                    octave=oct_.index, layer=int(l2),
                ))
    return sorted(keypoints, key=Keypoint.sort_key)


# --------------------------------------------------------------------------
# Descriptors

def _descriptor(gauss: np.ndarray, x: float, y: float, sigma: float, theta: float, cfg: SiftConfig):
    d, nb = cfg.descriptor_width, cfg.descriptor_bins
    H, W = gauss.shape
    hist_width = 3.0 * sigma
    radius = int(np.rint(hist_width * np.sqrt(2) * (d + 1) * 0.5))
    cx, cy = int(np.rint(x)), int(np.rint(y))
    if not (1 <= cx < W - 1 and 1 <= cy < H - 1):
        return None
    ys, xs = np.mgrid[cy - radius:cy + radius + 1, cx - radius:cx + radius + 1]
    inside = (xs > 0) & (xs < W - 1) & (ys > 0) & (ys < H - 1)
    xs, ys = xs[inside], ys[inside]
    ox, oy = xs - x, ys - y
    c, s_ = np.cos(theta), np.sin(theta)
    # rotate into the keypoint frame
    rx = (c * ox + s_ * oy) / hist_width
    ry = (-s_ * ox + c * oy) / hist_width
    rbin = ry + d / 2 - 0.5
    cbin = rx + d / 2 - 0.5
    ok = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    xs, ys, rbin, cbin, rx, ry = xs[ok], ys[ok], rbin[ok], cbin[ok], rx[ok], ry[ok]
    dx = gauss[ys, xs + 1] - gauss[ys, xs - 1]
    dy = gauss[ys + 1, xs] - gauss[ys - 1, xs]
    if not len(dx) or max(np.abs(dx).max(), np.abs(dy).max()) <= _FLAT_GRADIENT:
        return None  # flat window: only rounding noise left in the gradients
    mag = np.hypot(dx, dy) * np.exp(-(rx * rx + ry * ry) / (2 * (0.5 * d) ** 2))
    obin = ((np.arctan2(dy, dx) - theta) % (2 * np.pi)) * nb / (2 * np.pi)

    r0, c0, o0 = np.floor(rbin).astype(int), np.floor(cbin).astype(int), np.floor(obin).astype(int)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2, d + 2, nb))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(hist, (r0 + dr + 1, c0 + dc + 1, (o0 + do) % nb), mag * wr * wc * wo)
    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return None
    vec = np.minimum(vec / norm, cfg.descriptor_clip)
    norm = np.linalg.norm(vec)
    return vec / norm


def compute_descriptors(image, keypoints: list[Keypoint], config: SiftConfig = SiftConfig()):
    """Descriptors for ``keypoints``; returns ``(kept_keypoints, descriptors, dropped)``.

    Window samples falling outside the image are skipped. Keypoints centred on
    the outermost pixel ring, or whose window has no gradient at all, are
    dropped and counted rather than raising.
    """
    img = _prepare(image)
    _check_size(img)
    octaves, factor = _build_pyramid(img, config)
    kept, descs = [], []
    dropped = 0
    for kp in keypoints:
        o = kp.octave
        if o >= len(octaves):
            dropped += 1
            continue
        unit = factor * 2.0 ** o
        gauss = octaves[o].gauss[min(kp.layer, len(octaves[o].gauss) - 1)]
        vec = _descriptor(gauss, kp.x / unit, kp.y / unit, kp.scale / unit, kp.orientation, config)
        if vec is None:
            dropped += 1
            continue
        kept.append(kp)
        descs.append(vec)
    if dropped:
        log.warning("dropped %d keypoints at the image border or without gradient", dropped)
    arr = np.array(descs).reshape(-1, DESCRIPTOR_DIM)
    return kept, arr, dropped


def extract_features(image, config: SiftConfig = SiftConfig()) -> FeatureSet:
    """Detect, describe and snap everything to feature-file precision."""
    kps = detect_keypoints(image, config)
    kept, desc, dropped = compute_descriptors(image, kps, config)
    xy = np.array([[k.x, k.y] for k in kept], dtype=np.float32).reshape(-1, 2)
    return FeatureSet(
        xy=xy.astype(np.float64),
        scale=np.array([k.scale for k in kept], dtype=np.float32).astype(np.float64),
        orientation=np.array([k.orientation for k in kept], dtype=np.float32).astype(np.float64),
        descriptors=dequantize(quantize(desc)),
        dropped=dropped,
        keypoints=kept,
    )


# --------------------------------------------------------------------------
# HFF1 file: magic, then records (x, y, scale, orientation as f32 LE; 128 x u8)

_RECORD = np.dtype([("geom", "<f4", (4,)), ("desc", "u1", (DESCRIPTOR_DIM,))])


def encode_features(fs: FeatureSet) -> bytes:
    rec = np.zeros(len(fs), dtype=_RECORD)
    rec["geom"] = np.column_stack([fs.xy, fs.scale, fs.orientation]) if len(fs) else np.zeros((0, 4))
    rec["desc"] = quantize(fs.descriptors)
    return FEATURE_MAGIC + rec.tobytes()


def decode_features(data: bytes) -> FeatureSet:
    if data[:4] != FEATURE_MAGIC:
        raise MalformedHeader("feature file lacks HFF1 magic")
    if (len(data) - 4) % _RECORD.itemsize:
        raise TruncatedPayload("feature file body is not a whole number of records")
    rec = np.frombuffer(data, dtype=_RECORD, offset=4)
    g = rec["geom"].astype(np.float64).reshape(-1, 4)
    return FeatureSet(g[:, :2].copy(), g[:, 2].copy(), g[:, 3].copy(), dequantize(rec["desc"]).reshape(-1, DESCRIPTOR_DIM))


def write_features(fs: FeatureSet, path: str | Path) -> None:
    try:
        Path(path).write_bytes(encode_features(fs))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_features(path: str | Path) -> FeatureSet:
    try:
        return decode_features(Path(path).read_bytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

