"""ENVI-style hyperspectral cube reading and writing, plus band composites.

Cubes are held in memory band-last, ``values[line, sample, band]``, whatever
the on-disk interleave. Only 16-bit unsigned (ENVI type 12) and 32-bit float
(ENVI type 4) samples are supported.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    IoFailure,
    MalformedValue,
    MissingKey,
    SizeMismatch,
    UnsupportedDataType,
    WavelengthCountMismatch,
    WavelengthOutOfRange,
)

ENVI_DTYPES = {12: "u16", 4: "f32"}
_DTYPE_CODES = {v: k for k, v in ENVI_DTYPES.items()}
_NUMPY_KIND = {"u16": "u2", "f32": "f4"}
REQUIRED_KEYS = ("samples", "lines", "bands", "interleave", "data type", "wavelength")
UNITS_KEY = "hyperfuse units"
REFLECTANCE_CLAMP = (-0.5, 2.0)
DATA_SUFFIXES = (".img", ".raw", ".dat", ".bil", ".bsq", ".bip", "")


class Units(enum.Enum):
    DigitalNumber = "dn"
    Reflectance = "reflectance"


@dataclass(frozen=True)
class CubeHeader:
    samples: int
    lines: int
    bands: int
    interleave: str
    data_type: str
    byte_order: str
    header_offset: int
    wavelengths: tuple[float, ...]
    extra: Mapping[str, str] = field(default_factory=dict)

    @property
    def itemsize(self) -> int:
        return 2 if self.data_type == "u16" else 4

    @property
    def payload_size(self) -> int:
        return self.samples * self.lines * self.bands * self.itemsize

    @property
    def numpy_dtype(self) -> np.dtype:
        prefix = "<" if self.byte_order == "little" else ">"
        return np.dtype(prefix + _NUMPY_KIND[self.data_type])


@dataclass(frozen=True)
class HyperCube:
    header: CubeHeader
    values: np.ndarray
    units: Units = Units.DigitalNumber

    def __post_init__(self):
        h = self.header
        if self.values.shape != (h.lines, h.samples, h.bands):
            raise SizeMismatch(
                f"array shape {self.values.shape} does not match header "
                f"{(h.lines, h.samples, h.bands)}"
            )

    @property
    def wavelengths(self) -> np.ndarray:
        return np.asarray(self.header.wavelengths, dtype=float)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def spectrum(self, line: int, sample: int) -> np.ndarray:
        return self.values[line, sample, :]

    def band_index(self, wavelength: float) -> int:
        return nearest_band(self.header.wavelengths, wavelength)


@dataclass(frozen=True)
class BandImage:
    """2D scalar (H, W) or RGB (H, W, 3) raster; rows are cube lines."""

    pixels: np.ndarray

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_gray(self) -> np.ndarray:
        """Luma (0.299 R + 0.587 G + 0.114 B) as float64; scalar images pass through."""
        p = self.pixels.astype(np.float64)
        if p.ndim == 2:
            return p
        return 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]


def make_cube(
    values: np.ndarray,
    wavelengths: Sequence[float],
    units: Units = Units.DigitalNumber,
    *,
    interleave: str = "bil",
    data_type: str | None = None,
    byte_order: str = "little",
    extra: Mapping[str, str] | None = None,
) -> HyperCube:
    """Build a cube (and a matching header) from a (lines, samples, bands) array."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise SizeMismatch("cube values must be 3-D (lines, samples, bands)")
    lines, samples, bands = values.shape
    if data_type is None:
        data_type = "f32" if units is Units.Reflectance else "u16"
    extra = dict(extra or {})
    if units is Units.Reflectance:
        extra[UNITS_KEY] = Units.Reflectance.value
    else:
        extra.pop(UNITS_KEY, None)
    header = CubeHeader(
        samples=samples,
        lines=lines,
        bands=bands,
        interleave=interleave.lower(),
        data_type=data_type,
        byte_order=byte_order,
        header_offset=0,
        wavelengths=tuple(float(w) for w in wavelengths),
        extra=extra,
    )
    _check_wavelengths(header.wavelengths, bands)
    return HyperCube(header, _freeze(values), units)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _check_wavelengths(wavelengths: Sequence[float], bands: int) -> None:
    if len(wavelengths) != bands:
        raise WavelengthCountMismatch(
            f"{len(wavelengths)} wavelengths listed for {bands} bands"
        )
    w = np.asarray(wavelengths, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(np.diff(w) <= 0):
        raise MalformedValue("wavelength", "values must be finite and strictly increasing")


# --------------------------------------------------------------------------
# Header text

_BLOCK_RE = re.compile(r"^\s*([^=]+?)\s*=\s*(.*)$")


def _split_header_entries(text: str) -> list[tuple[str, str]]:
    entries = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line.strip() or line.strip() == "ENVI" or line.lstrip().startswith(";"):
            continue
        m = _BLOCK_RE.match(line)
        if not m:
            raise MalformedValue(line.strip(), "expected 'key = value'")
        key, value = m.group(1).strip().lower(), m.group(2).strip()
        if value.startswith("{"):
            while "}" not in value and i < len(lines):
                value += " " + lines[i].strip()
                i += 1
            if "}" not in value:
                raise MalformedValue(key, "unterminated '{' block")
        entries.append((key, value))
    return entries


def _block_items(value: str) -> list[str]:
    inner = value.strip()
    if inner.startswith("{") and inner.endswith("}"):
        inner = inner[1:-1]
    return [tok.strip() for tok in inner.split(",") if tok.strip()]


def _parse_int(key: str, value: str, minimum: int) -> int:
    try:
        v = int(value.strip())
    except ValueError:
        raise MalformedValue(key, value) from None
    if v < minimum:
        raise MalformedValue(key, value)
    return v


def parse_envi_header(text: str) -> CubeHeader:
    """Parse ENVI header text.

    Keys are case-insensitive. Keys the header type does not model are kept
    verbatim in ``extra`` so a written header re-parses identically.
    """
    entries = dict(_split_header_entries(text))
    for key in REQUIRED_KEYS:
        if key not in entries:
            raise MissingKey(key)

    samples = _parse_int("samples", entries.pop("samples"), 1)
    lines = _parse_int("lines", entries.pop("lines"), 1)
    bands = _parse_int("bands", entries.pop("bands"), 1)

    interleave = entries.pop("interleave").strip().lower()
    if interleave not in ("bil", "bsq", "bip"):
        raise MalformedValue("interleave", interleave)

    code = _parse_int("data type", entries.pop("data type"), 0)
    if code not in ENVI_DTYPES:
        raise UnsupportedDataType(f"ENVI data type {code} (supported: 12=u16, 4=f32)")

    order = entries.pop("byte order", "0").strip()
    if order not in ("0", "1"):
        raise MalformedValue("byte order", order)

    offset = _parse_int("header offset", entries.pop("header offset", "0"), 0)

    raw_wl = entries.pop("wavelength")
    try:
        wavelengths = tuple(float(tok) for tok in _block_items(raw_wl))
    except ValueError:
        raise MalformedValue("wavelength", raw_wl) from None
    _check_wavelengths(wavelengths, bands)

    return CubeHeader(
        samples=samples,
        lines=lines,
        bands=bands,
        interleave=interleave,
        data_type=ENVI_DTYPES[code],
        byte_order="little" if order == "0" else "big",
        header_offset=offset,
        wavelengths=wavelengths,
        extra=entries,
    )


def format_envi_header(header: CubeHeader) -> str:
    out = [
        "ENVI",
        f"samples = {header.samples}",
        f"lines = {header.lines}",
        f"bands = {header.bands}",
        f"header offset = {header.header_offset}",
        f"data type = {_DTYPE_CODES[header.data_type]}",
        f"interleave = {header.interleave}",
        f"byte order = {0 if header.byte_order == 'little' else 1}",
    ]
    for key, value in header.extra.items():
        out.append(f"{key} = {value}")
    out.append("wavelength = {" + ", ".join(repr(float(w)) for w in header.wavelengths) + "}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# Payload

def _units_from_header(header: CubeHeader) -> Units:
    if header.extra.get(UNITS_KEY, "").strip().lower() == Units.Reflectance.value:
        return Units.Reflectance
    return Units.DigitalNumber


def load_cube(header: CubeHeader, payload: bytes) -> HyperCube:
    """Decode a raw payload (including any ``header offset`` prefix) into a cube.

    The result is DigitalNumber unless the header carries the reflectance
    units marker written by :func:`write_cube`.
    """
    if header.data_type not in _NUMPY_KIND:
        raise UnsupportedDataType(header.data_type)
    body = memoryview(payload)[header.header_offset:]
    if len(body) != header.payload_size:
        raise SizeMismatch(
            f"payload has {len(body)} bytes after offset, header implies {header.payload_size}"
        )
    flat = np.frombuffer(body, dtype=header.numpy_dtype)
    L, S, B = header.lines, header.samples, header.bands
    if header.interleave == "bsq":
        arr = flat.reshape(B, L, S).transpose(1, 2, 0)
    elif header.interleave == "bil":
        arr = flat.reshape(L, B, S).transpose(0, 2, 1)
    else:
        arr = flat.reshape(L, S, B)
    return HyperCube(header, _freeze(arr.astype(np.float64)), _units_from_header(header))


def encode_cube(cube: HyperCube) -> bytes:
    """Inverse of :func:`load_cube`: raw bytes laid out per the cube header."""
    h = cube.header
    values = cube.values
    if cube.units is Units.Reflectance:
        values = np.clip(values, *REFLECTANCE_CLAMP)
    if h.data_type == "u16":
        values = np.clip(np.rint(values), 0, 65535)
    values = values.astype(h.numpy_dtype)
    if h.interleave == "bsq":
        arr = values.transpose(2, 0, 1)
    elif h.interleave == "bil":
        arr = values.transpose(0, 2, 1)
    else:
        arr = values
    return bytes(h.header_offset) + np.ascontiguousarray(arr).tobytes()


def data_path_for(header_path: Path) -> Path:
    return Path(header_path).with_suffix(".img")


def write_cube(cube: HyperCube, header_path: str | Path) -> Path:
    """Write ``<stem>.hdr`` and ``<stem>.img``; returns the data file path."""
    header_path = Path(header_path)
    data_path = data_path_for(header_path)
    try:
        header_path.write_text(format_envi_header(cube.header))
        data_path.write_bytes(encode_cube(cube))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return data_path


def _find_data_file(header_path: Path) -> Path:
    stem = header_path.with_suffix("")
    for suffix in DATA_SUFFIXES:
        candidate = stem.with_suffix(suffix) if suffix else stem
        if candidate.exists() and candidate != header_path:
            return candidate
    raise IoFailure(f"no data file found next to {header_path}")


def read_cube(header_path: str | Path) -> HyperCube:
    header_path = Path(header_path)
    try:
        header = parse_envi_header(header_path.read_text())
        payload = _find_data_file(header_path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return load_cube(header, payload)


def with_values(cube: HyperCube, values: np.ndarray, units: Units) -> HyperCube:
    """Copy of ``cube`` with new values and units; header adjusted to match."""
    extra = dict(cube.header.extra)
    if units is Units.Reflectance:
        extra[UNITS_KEY] = Units.Reflectance.value
        header = replace(cube.header, data_type="f32", header_offset=0, extra=extra)
    else:
        extra.pop(UNITS_KEY, None)
        header = replace(cube.header, header_offset=0, extra=extra)
    return HyperCube(header, _freeze(np.asarray(values, dtype=np.float64)), units)


# --------------------------------------------------------------------------
# Composites

def nearest_band(wavelengths: Sequence[float], target: float) -> int:
    """Index of the band closest to ``target``; ties go to the lower index."""
    w = np.asarray(wavelengths, dtype=float)
    if not (w[0] <= target <= w[-1]):
        raise WavelengthOutOfRange(
            f"{target} nm outside cube range [{w[0]}, {w[-1]}] nm"
        )
    return int(np.argmin(np.abs(w - target)))


def percentile_stretch(channel: np.ndarray, low: float = 2.0, high: float = 98.0) -> np.ndarray:
    """Linear stretch of the [low, high] percentile range onto 0..255 (uint8).

    A channel with no spread maps to mid-gray (128).
    """
    channel = np.asarray(channel, dtype=np.float64)
    lo, hi = np.percentile(channel, [low, high])
    if not hi > lo:
        return np.full(channel.shape, 128, dtype=np.uint8)
    t = np.clip((channel - lo) / (hi - lo), 0.0, 1.0)
    # snap sub-ulp differences so a global gain never flips a rounding decision
    t = np.round(t, 9)
    return np.rint(t * 255.0).astype(np.uint8)


def rgb_composite(
    cube: HyperCube,
    bands: tuple[float, float, float] = (640.0, 550.0, 460.0),
    low: float = 2.0,
    high: float = 98.0,
) -> BandImage:
    """True-color style composite from the bands nearest the requested wavelengths."""
    idx = [cube.band_index(w) for w in bands]
    channels = [percentile_stretch(cube.values[:, :, i], low, high) for i in idx]
    return BandImage(np.stack(channels, axis=-1))
