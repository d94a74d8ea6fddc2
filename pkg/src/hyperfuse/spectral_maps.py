"""Rule-based material maps (paved road / vegetation / shade) from reflectance."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cube_io import BandImage, HyperCube, Units
from .errors import ConfigError, IoFailure, UnitsMismatch


class Material(enum.IntEnum):
    Unknown = 0
    Road = 1
    Vegetation = 2
    Shade = 3


CLASS_COLORS = {
    Material.Road: (255, 0, 0),
    Material.Vegetation: (0, 255, 0),
    Material.Shade: (0, 0, 255),
    Material.Unknown: (128, 128, 128),
}


@dataclass(frozen=True)
class ClassifierThresholds:
    ndvi_red_nm: float = 670.0
    ndvi_nir_nm: float = 800.0
    ndvi_vegetation_min: float = 0.4
    shade_brightness_max: float = 0.05
    road_ndvi_max: float = 0.2

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise ConfigError(f"threshold {name} must be positive")
        if not self.ndvi_red_nm < self.ndvi_nir_nm:
            raise ConfigError("ndvi_red_nm must be below ndvi_nir_nm")


@dataclass(frozen=True)
class ClassMap:
    labels: np.ndarray  # (lines, samples) uint8 of Material values

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def counts(self) -> dict[Material, int]:
        return {m: int(np.count_nonzero(self.labels == m)) for m in Material}

    def render(self) -> np.ndarray:
        """RGB uint8 image, one pixel per cube sample."""
        lut = np.zeros((len(Material), 3), dtype=np.uint8)
        for m, rgb in CLASS_COLORS.items():
            lut[m] = rgb
        return lut[self.labels]


def _require_reflectance(cube: HyperCube) -> None:
    if cube.units is not Units.Reflectance:
        raise UnitsMismatch(f"expected a reflectance cube, got {cube.units.name}")


def ndvi(cube: HyperCube, red_nm: float = 670.0, nir_nm: float = 800.0) -> BandImage:
    """(NIR - RED) / (NIR + RED) from the nearest bands; 0 where the sum is 0."""
    _require_reflectance(cube)
    red = cube.values[:, :, cube.band_index(red_nm)]
    nir = cube.values[:, :, cube.band_index(nir_nm)]
    num = nir - red
    den = nir + red
    out = np.zeros_like(den)
    np.divide(num, den, out=out, where=den != 0)
    return BandImage(out)


def classify_materials(
    cube: HyperCube, t: ClassifierThresholds = ClassifierThresholds()
) -> ClassMap:
    """Label each pixel with a fixed decision list.

    Shade when mean reflectance over all bands is below the brightness floor,
    else Vegetation when NDVI exceeds the vegetation minimum, else Road when
    NDVI is below the road maximum, else Unknown. The brightness rule is
    absolute, so labels are not invariant to a global gain.
    """
    _require_reflectance(cube)
    index = ndvi(cube, t.ndvi_red_nm, t.ndvi_nir_nm).pixels
    brightness = cube.values.mean(axis=2)
    labels = np.full(brightness.shape, Material.Unknown, dtype=np.uint8)
    road = index < t.road_ndvi_max
    veg = index > t.ndvi_vegetation_min
    shade = brightness < t.shade_brightness_max
    # assign in reverse priority so earlier rules overwrite later ones
    labels[road] = Material.Road
    labels[veg] = Material.Vegetation
    labels[shade] = Material.Shade
    return ClassMap(labels)


def write_class_png(cmap: ClassMap, path: str | Path) -> None:
    from PIL import Image

    try:
        Image.fromarray(cmap.render()).save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def write_class_counts(cmap: ClassMap, path: str | Path) -> None:
    total = cmap.labels.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "pixels", "fraction"])
        for m, n in cmap.counts().items():
            w.writerow([m.name, n, repr(n / total)])
