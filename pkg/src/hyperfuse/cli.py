"""Command-line interface.

Exit codes: 0 success, 1 I/O failure, 2 invalid input or usage, 3 registration
not accepted. Failures print one JSON object to standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from .cloud import build_vocabulary, read_cloud, read_vocabulary, write_vocabulary
from .cube_io import HyperCube, Units, read_cube, rgb_composite, write_cube
from .errors import ConfigError, HyperfuseError, IoFailure, ModelNotAccepted
from .features import SiftConfig, extract_features, read_features, write_features
from .fusion import FusedPaths, GeoRef, export_fused, fuse_georef, fuse_projective
from .manifest import build_manifest, write_manifest
from .parallel import resolve_threads
from .radiometry import (Roi, calibrate_cube, read_asd_csv, roi_statistics,
                         write_roi_stats_csv)
from .registration import ProjectionModel, SprtConfig, match_descriptors, ransac_register
from .spectral_maps import ClassifierThresholds, classify_materials, write_class_counts, write_class_png

log = logging.getLogger("hyperfuse")

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NOT_ACCEPTED = 0, 1, 2, 3


class UsageError(HyperfuseError):
    pass


class NotAccepted(HyperfuseError):
    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


def _emit_error(kind: str, message: str, code: int, **details) -> int:
    doc = {"error": kind, "message": message, "exit_code": code}
    doc.update(details)
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# helpers

def _stem(path: str | Path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix else p


def _manifest_path(output: str | Path) -> Path:
    return Path(f"{_stem(output)}.manifest.json")


def _finish(args, cfg, inputs, outputs, seed=None, manifest=None, **extra):
    path = Path(manifest) if manifest else _manifest_path(next(iter(outputs.values())))
    doc = build_manifest(args.command, inputs, outputs, cfg, seed, **extra)
    write_manifest(doc, path)


def _sift(cfg) -> SiftConfig:
    return SiftConfig(
        sigma0=cfg["sift_sigma0"],
        scales_per_octave=cfg["sift_scales_per_octave"],
        contrast_threshold=cfg["sift_contrast_threshold"],
        edge_ratio=cfg["sift_edge_ratio"],
        double_image=cfg["sift_double_image"],
    )


def _sprt(cfg) -> SprtConfig:
    return SprtConfig(
        epsilon=cfg["sprt_epsilon"], delta=cfg["sprt_delta"], A=cfg["sprt_A"], tau=cfg["tau"],
        n_min=cfg["n_min"], eta0=cfg["eta0"], max_iterations=cfg["max_iterations"],
        seed=cfg["seed"], accept_rule=cfg["accept_rule"], adapt_delta=cfg["adapt_delta"],
    )


def _thresholds(cfg) -> ClassifierThresholds:
    return ClassifierThresholds(
        cfg["ndvi_red_nm"], cfg["ndvi_nir_nm"], cfg["ndvi_vegetation_min"],
        cfg["shade_brightness_max"], cfg["road_ndvi_max"],
    )


def _roi(text: str, key: str) -> Roi:
    if not text:
        raise ConfigError(f"{key} is required (x,y,width,height)")
    return Roi.parse(text)


def _cube_features(cube, cfg):
    if cube.units is not Units.Reflectance:
        log.warning("extracting features from a DN cube; calibrate first for comparable composites")
    image = rgb_composite(cube, tuple(cfg["rgb_bands_nm"]))
    return extract_features(image, _sift(cfg))


def _register(fs, vocab, cfg, threads):
    corrs = match_descriptors(fs.xy, fs.descriptors, vocab, cfg["ratio_max"], cfg["dist_max"],
                              cfg["per_query_limit"], threads)
    scfg = _sprt(cfg)
    log.info("%d correspondences from %d features", len(corrs), len(fs))
    result = ransac_register(corrs, scfg)
    pose = result.pose_dict(scfg)
    pose["correspondences"] = len(corrs)
    return corrs, result, pose


def _write_pose(pose: dict, path: Path) -> None:
    try:
        path.write_text(json.dumps(pose, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _read_pose(path) -> tuple[ProjectionModel, bool]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a pose document ({exc})") from None
    if doc.get("P") is None:
        return None, False
    P = np.asarray(doc["P"], dtype=np.float64)
    if P.size != 12:
        raise ConfigError(f"{path}: P must hold 12 numbers")
    return ProjectionModel(P.reshape(3, 4)), bool(doc.get("accepted"))


def _not_accepted(result):
    return NotAccepted(
        "registration not accepted",
        inliers=len(result.inliers), iterations=result.iterations,
    )


# --------------------------------------------------------------------------
# commands

def cmd_calibrate(args, cfg, threads):
    cube = read_cube(args.cube)
    ref = read_asd_csv(args.asd)
    refl = calibrate_cube(cube, _roi(cfg["tarp_roi"], "tarp_roi"), ref, cfg["resample_mode"],
                          cfg["resample_fwhm_nm"])
    refl = HyperCube(replace(refl.header, interleave=cfg["interleave"]), refl.values, refl.units)
    data = write_cube(refl, args.output)
    _finish(args, cfg, {"cube": args.cube, "asd": args.asd},
            {"header": args.output, "data": data})


def cmd_stats(args, cfg, threads):
    cube = read_cube(args.cube)
    stats = roi_statistics(cube, _roi(cfg["stats_roi"], "stats_roi"))
    write_roi_stats_csv(stats, args.output)
    outputs = {"csv": args.output}
    if args.svg:
        from .plotting import plot_roi_stats
        plot_roi_stats(stats, args.svg)
        outputs["svg"] = args.svg
    _finish(args, cfg, {"cube": args.cube}, outputs)


def cmd_classify(args, cfg, threads):
    cube = read_cube(args.cube)
    cmap = classify_materials(cube, _thresholds(cfg))
    write_class_png(cmap, args.output)
    counts = args.counts or f"{_stem(args.output)}.counts.csv"
    write_class_counts(cmap, counts)
    outputs = {"png": args.output, "counts": counts}
    if args.legend:
        from .plotting import plot_class_map
        plot_class_map(cmap, args.legend)
        outputs["legend"] = args.legend
    _finish(args, cfg, {"cube": args.cube}, outputs)


def cmd_features(args, cfg, threads):
    fs = _cube_features(read_cube(args.cube), cfg)
    write_features(fs, args.output)
    _finish(args, cfg, {"cube": args.cube}, {"features": args.output},
            features=len(fs), dropped_keypoints=fs.dropped)


def cmd_vocab(args, cfg, threads):
    cloud = read_cloud(args.cloud, args.descriptors)
    vocab = _build_vocab(cloud, cfg, threads)
    write_vocabulary(vocab, args.output)
    _finish(args, cfg, {"cloud": args.cloud, "descriptors": args.descriptors},
            {"vocabulary": args.output}, cfg["seed"], words=vocab.k)


def _build_vocab(cloud, cfg, threads):
    from .cloud.vocabulary import default_word_count
    n = 0 if cloud.descriptors is None else len(cloud.descriptors)
    k = default_word_count(n, cfg["vocab_k"])
    return build_vocabulary(cloud, k, cfg["seed"], cfg["kmeans_max_iters"], cfg["kmeans_tol"], threads)


def cmd_register(args, cfg, threads):
    fs = read_features(args.features)
    vocab = read_vocabulary(args.vocab)
    corrs, result, pose = _register(fs, vocab, cfg, threads)
    out = Path(args.output)
    _write_pose(pose, out)
    outputs = {"pose": out}
    if args.figure:
        _registration_figure(corrs, result, args.figure)
        outputs["figure"] = args.figure
    _finish(args, cfg, {"features": args.features, "vocabulary": args.vocab}, outputs, cfg["seed"])
    if not result.accepted:
        raise _not_accepted(result)


def _registration_figure(corrs, result, path):
    from .plotting import plot_registration
    from .registration.dlt import correspondence_arrays
    uv, xyz = correspondence_arrays(corrs) if corrs else (np.zeros((0, 2)), np.zeros((0, 3)))
    proj = result.model.project(xyz) if result.model is not None and len(xyz) else uv
    plot_registration(uv, proj, result.inliers, path, result.sprt_histogram)


def cmd_fuse(args, cfg, threads):
    cloud = read_cloud(args.cloud)
    cube = read_cube(args.cube)
    model, accepted = _read_pose(args.pose)
    if model is None or not accepted:
        raise ModelNotAccepted(f"{args.pose} holds no accepted registration")
    fused = fuse_projective(cloud, cube, model, cfg["z_tolerance"], accepted)
    _export(args, cfg, fused, {"cloud": args.cloud, "cube": args.cube, "pose": args.pose})


def cmd_fuse_geo(args, cfg, threads):
    cloud = read_cloud(args.cloud)
    cube = read_cube(args.cube)
    fused = fuse_georef(cloud, cube, GeoRef.read(args.georef))
    _export(args, cfg, fused, {"cloud": args.cloud, "cube": args.cube, "georef": args.georef})


def _export(args, cfg, fused, inputs, seed=None, manifest=None, extra_outputs=None):
    paths = FusedPaths.for_stem(_stem(args.output))
    export_fused(fused, paths, cfg["ply_format"])
    outputs = {"ply": paths.ply, "spectra": paths.spectra}
    outputs.update(extra_outputs or {})
    _finish(
        args, cfg, inputs, outputs, seed, manifest,
        wavelengths_nm=[float(w) for w in fused.wavelengths],
        fused_points=int(len(fused.spectra)),
        occluded_points=int(fused.occluded.sum()),
        total_points=int(len(fused.points)),
        overlap_policy="last-writer-wins",
    )


def cmd_pipeline(args, cfg, threads):
    out = Path(args.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    cube = read_cube(args.cube)
    cloud = read_cloud(args.cloud, args.descriptors)
    inputs = {"cube": args.cube, "cloud": args.cloud, "descriptors": args.descriptors}
    outputs = {}
    if args.vocab:
        vocab = read_vocabulary(args.vocab)
        inputs["vocabulary"] = args.vocab
    else:
        vocab = _build_vocab(cloud, cfg, threads)
        write_vocabulary(vocab, out / "vocabulary.hfv")
        outputs["vocabulary"] = out / "vocabulary.hfv"
    fs = _cube_features(cube, cfg)
    write_features(fs, out / "features.hff")
    outputs["features"] = out / "features.hff"
    corrs, result, pose = _register(fs, vocab, cfg, threads)
    _write_pose(pose, out / "pose.json")
    outputs["pose"] = out / "pose.json"
    if args.figure:
        _registration_figure(corrs, result, out / "registration.png")
        outputs["figure"] = out / "registration.png"
    if not result.accepted:
        _finish(args, cfg, inputs, outputs, cfg["seed"], out / "manifest.json")
        raise _not_accepted(result)
    fused = fuse_projective(cloud, cube, result.model, cfg["z_tolerance"], True)
    args.output = str(out / "fused")
    _export(args, cfg, fused, inputs, cfg["seed"], out / "manifest.json", outputs)


COMMANDS = {
    "calibrate": cmd_calibrate,
    "stats": cmd_stats,
    "classify": cmd_classify,
    "features": cmd_features,
    "vocab": cmd_vocab,
    "register": cmd_register,
    "fuse": cmd_fuse,
    "fuse-geo": cmd_fuse_geo,
    "pipeline": cmd_pipeline,
}

# flag name -> config key, for flags that override the config file
_OVERRIDES = {
    "seed": "seed", "tarp_roi": "tarp_roi", "roi": "stats_roi", "resample": "resample_mode",
    "interleave": "interleave", "k": "vocab_k", "max_iters": "kmeans_max_iters",
    "ratio_max": "ratio_max", "dist_max": "dist_max", "per_query_limit": "per_query_limit",
    "tau": "tau", "n_min": "n_min", "accept_rule": "accept_rule", "z_tolerance": "z_tolerance",
    "ply_format": "ply_format", "max_iterations": "max_iterations",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat TOML file of run settings")
    common.add_argument("--threads", type=int, help="worker threads (default: $HYPERFUSE_THREADS or 1)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="hyperfuse", description="Hyperspectral cube calibration and 3D fusion.")
    p.add_argument("--version", action="version", version=f"hyperfuse {__version__}")
    p.add_argument("--dump-config", action="store_true", help="print the default config as TOML and exit")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("calibrate", parents=[common], help="DN cube to reflectance with a tarp")
    s.add_argument("--cube", required=True)
    s.add_argument("--asd", required=True, help="reference CSV: wavelength_nm,reflectance")
    s.add_argument("--tarp-roi", help="x,y,width,height")
    s.add_argument("--resample", choices=("linear", "gaussian"))
    s.add_argument("--interleave", choices=("bil", "bsq", "bip"))
    s.add_argument("-o", "--output", required=True)

    s = sub.add_parser("stats", parents=[common], help="per-band ROI statistics")
    s.add_argument("--cube", required=True)
    s.add_argument("--roi", help="x,y,width,height")
    s.add_argument("--svg", help="also render the statistics plot")
    s.add_argument("-o", "--output", required=True)

    s = sub.add_parser("classify", parents=[common], help="road / vegetation / shade map")
    s.add_argument("--cube", required=True)
    s.add_argument("--counts", help="class count CSV (default: <output>.counts.csv)")
    s.add_argument("--legend", help="also render the map with a legend")
    s.add_argument("-o", "--output", required=True)

    s = sub.add_parser("features", parents=[common], help="keypoints and descriptors of a cube")
    s.add_argument("--cube", required=True)
    s.add_argument("-o", "--output", required=True)

    s = sub.add_parser("vocab", parents=[common], help="visual vocabulary from a cloud")
    s.add_argument("--cloud", required=True)
    s.add_argument("--descriptors", required=True, help="HFD1 sidecar")
    s.add_argument("--k", type=int)
    s.add_argument("--max-iters", type=int)
    s.add_argument("-o", "--output", required=True)

    reg = _Parser(add_help=False)
    reg.add_argument("--ratio-max", type=float)
    reg.add_argument("--dist-max", type=float)
    reg.add_argument("--per-query-limit", type=int)
    reg.add_argument("--tau", type=float)
    reg.add_argument("--n-min", type=int)
    reg.add_argument("--accept-rule", choices=("gt", "ge"))
    reg.add_argument("--max-iterations", type=int)
    reg.add_argument("--figure", help="also render registration diagnostics")

    s = sub.add_parser("register", parents=[common, reg], help="pose of a cube against a vocabulary")
    s.add_argument("--features", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("-o", "--output", required=True, help="pose JSON")

    fz = _Parser(add_help=False)
    fz.add_argument("--ply-format", choices=("binary_little_endian", "ascii"))

    s = sub.add_parser("fuse", parents=[common, fz], help="spectra onto points through a pose")
    s.add_argument("--cloud", required=True)
    s.add_argument("--cube", required=True)
    s.add_argument("--pose", required=True)
    s.add_argument("--z-tolerance", type=float)
    s.add_argument("-o", "--output", required=True, help="output stem (.ply and .hfs)")

    s = sub.add_parser("fuse-geo", parents=[common, fz], help="spectra onto points through a geotransform")
    s.add_argument("--cloud", required=True)
    s.add_argument("--cube", required=True)
    s.add_argument("--georef", required=True, help="JSON geotransform")
    s.add_argument("-o", "--output", required=True, help="output stem (.ply and .hfs)")

    s = sub.add_parser("pipeline", parents=[common, reg, fz], help="features, register and fuse")
    s.add_argument("--cube", required=True, help="reflectance cube")
    s.add_argument("--cloud", required=True)
    s.add_argument("--descriptors", help="HFD1 sidecar (needed unless --vocab is given)")
    s.add_argument("--vocab")
    s.add_argument("--k", type=int)
    s.add_argument("--z-tolerance", type=float)
    s.add_argument("-o", "--output", required=True, help="output directory")
    return p


def _effective_config(args) -> dict:
    file_values = config_mod.load_config_file(args.config) if args.config else {}
    overrides = {key: getattr(args, flag) for flag, key in _OVERRIDES.items() if hasattr(args, flag)}
    return config_mod.resolve(file_values, overrides)


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.dump_config:
            sys.stdout.write(config_mod.dumps_toml(config_mod.resolve()))
            return EXIT_OK
        if not args.command:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
        )
        threads = resolve_threads(args.threads)
        cfg = _effective_config(args)
        COMMANDS[args.command](args, cfg, threads)
    except NotAccepted as exc:
        return _emit_error("NotAccepted", str(exc), EXIT_NOT_ACCEPTED, **exc.details)
    except ModelNotAccepted as exc:
        return _emit_error("ModelNotAccepted", str(exc), EXIT_NOT_ACCEPTED)
    except IoFailure as exc:
        return _emit_error("IoFailure", str(exc), EXIT_IO)
    except (HyperfuseError, ValueError) as exc:
        return _emit_error(type(exc).__name__, str(exc), EXIT_INVALID)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
