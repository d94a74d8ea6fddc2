"""Run configuration: one flat TOML table, every tunable with its default.

Precedence, lowest first: built-in defaults, the ``--config`` file, explicit
command-line flags. Unknown keys and wrongly typed values are rejected.
"""
from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, IoFailure

DEFAULTS: dict[str, object] = {
    "seed": 0,
    # radiometry
    "resample_mode": "linear",
    "resample_fwhm_nm": 6.0,
    "tarp_roi": "",
    "stats_roi": "",
    "interleave": "bil",
    # composites and classes
    "rgb_bands_nm": [640.0, 550.0, 460.0],
    "ndvi_red_nm": 670.0,
    "ndvi_nir_nm": 800.0,
    "ndvi_vegetation_min": 0.4,
    "shade_brightness_max": 0.05,
    "road_ndvi_max": 0.2,
    # features
    "sift_sigma0": 1.6,
    "sift_scales_per_octave": 3,
    "sift_contrast_threshold": 0.03,
    "sift_edge_ratio": 10.0,
    "sift_double_image": True,
    # vocabulary
    "vocab_k": 100000,
    "kmeans_max_iters": 100,
    "kmeans_tol": 1e-8,
    # matching and registration
    "ratio_max": 0.8,
    "dist_max": 1.0,
    "per_query_limit": 5,
    "sprt_epsilon": 0.2,
    "sprt_delta": 0.05,
    "sprt_A": 20.0,
    "tau": 3.0,
    "n_min": 5,
    "accept_rule": "gt",
    "eta0": 0.01,
    "max_iterations": 10000,
    "adapt_delta": False,
    # fusion and export
    "z_tolerance": 0.2,
    "ply_format": "binary_little_endian",
}

_CHOICES = {
    "resample_mode": ("linear", "gaussian"),
    "interleave": ("bil", "bsq", "bip"),
    "accept_rule": ("gt", "ge"),
    "ply_format": ("binary_little_endian", "ascii"),
}


def _check_type(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = (isinstance(value, list) and len(value) == len(default)
              and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value))
        value = [float(v) for v in value] if ok else value
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"config key {key!r} expects {type(default).__name__}, got {value!r}")
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"config key {key!r} must be one of {_CHOICES[key]}, got {value!r}")
    return value


def validate(values: dict) -> dict:
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return {k: _check_type(k, v) for k, v in values.items()}


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in doc.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be a flat table; found sections {nested}")
    return validate(doc)


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Effective config: defaults, then file values, then non-None overrides."""
    cfg = dict(DEFAULTS)
    cfg["rgb_bands_nm"] = list(cfg["rgb_bands_nm"])
    cfg.update(validate(file_values or {}))
    cfg.update(validate({k: v for k, v in (overrides or {}).items() if v is not None}))
    return cfg


def dumps_toml(cfg: dict) -> str:
    """Render a flat config back to TOML (used for ``--dump-config``)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)
    return "".join(f"{k} = {fmt(v)}\n" for k, v in cfg.items())
