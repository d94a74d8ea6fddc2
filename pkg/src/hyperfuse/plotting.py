"""Report figures. Everything renders off-screen with the Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

from .errors import IoFailure  # noqa: E402
from .radiometry import RoiStats  # noqa: E402
from .spectral_maps import CLASS_COLORS, ClassMap, Material  # noqa: E402

# fixed ids and no date stamp keep SVG output byte-stable between runs
_RC = {"svg.hashsalt": "hyperfuse", "svg.fonttype": "path"}
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path: Path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower() or "svg"
    meta = _SVG_META if fmt == "svg" else {"Software": None} if fmt == "png" else None
    try:
        fig.savefig(path, format=fmt, metadata=meta)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    finally:
        plt.close(fig)


def plot_roi_stats(stats: RoiStats, path: str | Path, title: str | None = None) -> None:
    """Mean in black, a purple +/-1 std band and red min/max curves."""
    w = stats.wavelengths
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        ax.fill_between(w, stats.mean - stats.std, stats.mean + stats.std,
                        color="purple", alpha=0.3, linewidth=0, label="mean ± 1 std")
        ax.plot(w, stats.maximum, color="red", linewidth=0.8, label="min / max")
        ax.plot(w, stats.minimum, color="red", linewidth=0.8)
        ax.plot(w, stats.mean, color="black", linewidth=1.2, label="mean")
        ax.set_xlabel("wavelength (nm)")
        ax.set_ylabel("value")
        ax.set_title(title or f"ROI statistics ({stats.pixel_count} pixels)")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def plot_class_map(cmap: ClassMap, path: str | Path) -> None:
    """Class map with a legend and per-class pixel counts."""
    counts = cmap.counts()
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        ax.imshow(cmap.render(), interpolation="nearest")
        ax.set_axis_off()
        handles = [Patch(color=np.array(CLASS_COLORS[m]) / 255.0, label=f"{m.name} ({counts[m]})")
                   for m in Material]
        ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def plot_registration(uv: np.ndarray, projected: np.ndarray, inliers, path: str | Path,
                      histogram: dict | None = None) -> None:
    """Inlier residual vectors on the image plane and the SPRT points-tested histogram."""
    uv = np.asarray(uv, float).reshape(-1, 2)
    projected = np.asarray(projected, float).reshape(-1, 2)
    mask = np.zeros(len(uv), bool)
    mask[list(inliers)] = True
    with plt.rc_context(_RC):
        fig, (a0, a1) = plt.subplots(1, 2, figsize=(10, 4))
        a0.scatter(uv[~mask, 0], uv[~mask, 1], s=4, color="0.6", label="outliers")
        a0.scatter(uv[mask, 0], uv[mask, 1], s=6, color="tab:blue", label="inliers")
        if mask.any():
            d = projected[mask] - uv[mask]
            a0.quiver(uv[mask, 0], uv[mask, 1], d[:, 0], d[:, 1], angles="xy",
                      color="tab:red", width=0.003)
        a0.invert_yaxis()
        a0.set_xlabel("sample")
        a0.set_ylabel("line")
        a0.legend(fontsize=8)
        if histogram:
            keys = sorted(int(k) for k in histogram)
            a1.bar(keys, [histogram.get(k, histogram.get(str(k), 0)) for k in keys], color="tab:gray")
        a1.set_xlabel("points tested per model")
        a1.set_ylabel("models")
        fig.tight_layout()
        _save(fig, path)
