"""Tarp gain calibration (DN to reflectance) and ROI spectral statistics.

Reflectance per band is ``DN * r_ref / DN_tarp`` where ``r_ref`` is the field
spectrometer reflectance of the reference tarp resampled onto the cube bands
and ``DN_tarp`` is the mean DN over a user-chosen tarp rectangle. No offset
term is fitted.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cube_io import HyperCube, Units, with_values
from .errors import (
    IoFailure,
    MalformedValue,
    RoiOutOfBounds,
    TargetOutOfRange,
    UnitsMismatch,
    ZeroTarpSignal,
)

# Nano-Hyperspec slit image width; used only by the optional band-response mode.
DEFAULT_FWHM_NM = 6.0


@dataclass(frozen=True)
class Spectrum:
    wavelengths: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.wavelengths, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if w.ndim != 1 or w.shape != v.shape:
            raise MalformedValue("spectrum", "wavelengths and values must be 1-D of equal length")
        if w.size and np.any(np.diff(w) <= 0):
            raise MalformedValue("spectrum", "wavelengths must be strictly increasing")
        object.__setattr__(self, "wavelengths", w)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.wavelengths.size


@dataclass(frozen=True)
class Roi:
    """Pixel rectangle; ``x0`` counts samples (columns), ``y0`` lines (rows)."""

    x0: int
    y0: int
    width: int
    height: int

    @classmethod
    def parse(cls, text: str) -> "Roi":
        """Parse ``"x0,y0,width,height"``."""
        try:
            parts = [int(p) for p in text.split(",")]
        except ValueError:
            raise MalformedValue("roi", text) from None
        if len(parts) != 4:
            raise MalformedValue("roi", text)
        return cls(*parts)

    def check(self, cube: HyperCube) -> None:
        lines, samples, _ = cube.shape
        if (
            self.width < 1
            or self.height < 1
            or self.x0 < 0
            or self.y0 < 0
            or self.x0 + self.width > samples
            or self.y0 + self.height > lines
        ):
            raise RoiOutOfBounds(f"{self} does not fit in {samples}x{lines} cube")

    def slice(self, cube: HyperCube) -> np.ndarray:
        """ROI pixels as a (height, width, bands) view."""
        self.check(cube)
        return cube.values[self.y0:self.y0 + self.height, self.x0:self.x0 + self.width, :]


@dataclass(frozen=True)
class RoiStats:
    wavelengths: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    pixel_count: int


def resample_spectrum(
    source: Spectrum,
    targets: Sequence[float],
    mode: str = "linear",
    fwhm: float = DEFAULT_FWHM_NM,
) -> Spectrum:
    """Resample a finely gridded spectrum onto band centres.

    ``mode="linear"`` interpolates between the bracketing source samples and
    passes node values through exactly. ``mode="gaussian"`` averages the
    source under a Gaussian band response of the given FWHM, renormalised
    over the part of the response that falls inside the source range.
    """
    t = np.asarray(targets, dtype=float)
    lo, hi = source.wavelengths[0], source.wavelengths[-1]
    for lam in t:
        if not (lo <= lam <= hi):
            raise TargetOutOfRange(float(lam))
    if mode == "linear":
        return Spectrum(t, np.interp(t, source.wavelengths, source.values))
    if mode == "gaussian":
        sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
        w = np.exp(-0.5 * ((source.wavelengths[None, :] - t[:, None]) / sigma) ** 2)
        w /= w.sum(axis=1, keepdims=True)
        return Spectrum(t, w @ source.values)
    raise MalformedValue("resample mode", mode)


def roi_statistics(cube: HyperCube, roi: Roi) -> RoiStats:
    """Per-band mean, population std, min and max over the ROI pixels."""
    px = roi.slice(cube).reshape(-1, cube.shape[2])
    return RoiStats(
        wavelengths=cube.wavelengths,
        mean=px.mean(axis=0),
        std=px.std(axis=0),
        minimum=px.min(axis=0),
        maximum=px.max(axis=0),
        pixel_count=px.shape[0],
    )


def _reference_on_bands(cube: HyperCube, r_ref: Spectrum, mode: str, fwhm: float) -> np.ndarray:
    w = cube.wavelengths
    if r_ref.wavelengths.shape == w.shape and np.array_equal(r_ref.wavelengths, w):
        return r_ref.values
    return resample_spectrum(r_ref, w, mode=mode, fwhm=fwhm).values


def tarp_gain(cube: HyperCube, tarp_roi: Roi, r_ref: Spectrum, mode: str = "linear",
              fwhm: float = DEFAULT_FWHM_NM):
    """Return ``(dn_tarp, r_ref_on_bands)`` after validating the tarp signal."""
    dn_tarp = roi_statistics(cube, tarp_roi).mean
    bad = np.flatnonzero(~(dn_tarp > 0))
    if bad.size:
        raise ZeroTarpSignal(int(bad[0]))
    return dn_tarp, _reference_on_bands(cube, r_ref, mode, fwhm)


def calibrate_cube(
    cube: HyperCube, tarp_roi: Roi, r_ref: Spectrum, mode: str = "linear",
    fwhm: float = DEFAULT_FWHM_NM,
) -> HyperCube:
    """Convert a DN cube to reflectance with the single-tarp gain method.

    ``r_ref`` may be on any grid covering the cube bands; it is resampled when
    its wavelengths differ from the cube's. Negative values are kept.
    """
    if cube.units is not Units.DigitalNumber:
        raise UnitsMismatch(f"calibration needs a DN cube, got {cube.units.name}")
    dn_tarp, ref = tarp_gain(cube, tarp_roi, r_ref, mode, fwhm)
    # ratio first: a pixel equal to the tarp mean maps to r_ref exactly
    refl = (cube.values / dn_tarp) * ref
    return with_values(cube, refl, Units.Reflectance)


# --------------------------------------------------------------------------
# CSV interfaces

def read_asd_csv(path: str | Path) -> Spectrum:
    """Read a ``wavelength_nm,reflectance`` CSV (1 nm grid from the ASD)."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"wavelength_nm", "reflectance"} <= set(
                f.strip() for f in reader.fieldnames
            ):
                raise MalformedValue("asd csv header", reader.fieldnames)
            rows = [
                (float(r["wavelength_nm"]), float(r["reflectance"]))
                for r in ({k.strip(): v for k, v in row.items()} for row in reader)
            ]
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise MalformedValue("asd csv", str(exc)) from None
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return Spectrum(arr[:, 0], arr[:, 1])


def write_asd_csv(spectrum: Spectrum, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm", "reflectance"])
        for lam, v in zip(spectrum.wavelengths, spectrum.values):
            w.writerow([repr(float(lam)), repr(float(v))])


def write_roi_stats_csv(stats: RoiStats, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm", "mean", "std", "min", "max"])
        for row in zip(stats.wavelengths, stats.mean, stats.std, stats.minimum, stats.maximum):
            w.writerow([repr(float(v)) for v in row])


def read_roi_stats_csv(path: str | Path) -> RoiStats:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return RoiStats(data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4], pixel_count=0)
