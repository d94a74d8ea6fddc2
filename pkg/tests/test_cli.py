import json
import subprocess
import sys

import numpy as np
import pytest

from hyperfuse.cli import run
from hyperfuse.cube_io import Units, make_cube, read_cube, write_cube
from hyperfuse.manifest import file_sha256, read_manifest
from hyperfuse.radiometry import Spectrum, write_asd_csv
from synthetic import WAVELENGTHS, signature, write_scene


def invoke(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def scene_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    scene, paths = write_scene(d)
    return scene, paths


@pytest.fixture
def dn_inputs(tmp_path):
    rng = np.random.default_rng(0)
    dn = np.rint(rng.uniform(100, 900, (10, 12, len(WAVELENGTHS))))  # u16 on disk
    dn[0:3, 0:3] = 1000.0
    write_cube(make_cube(dn, WAVELENGTHS, Units.DigitalNumber), tmp_path / "dn.hdr")
    grid = np.arange(400.0, 1001.0)
    write_asd_csv(Spectrum(grid, np.full(len(grid), 0.48)), tmp_path / "asd.csv")
    return tmp_path / "dn.hdr", tmp_path / "asd.csv", dn


def test_calibrate(tmp_path, capsys, dn_inputs):
    cube, asd, dn = dn_inputs
    code, _, err = invoke(capsys, "calibrate", "--cube", cube, "--asd", asd, "--tarp-roi", "0,0,3,3",
                          "--interleave", "bsq", "-o", tmp_path / "refl.hdr")
    assert code == 0, err
    refl = read_cube(tmp_path / "refl.hdr")
    assert refl.units is Units.Reflectance and refl.header.interleave == "bsq"
    # written in the input data type (float32)
    np.testing.assert_allclose(refl.values, dn / 1000.0 * 0.48, rtol=1e-6)
    m = read_manifest(tmp_path / "refl.manifest.json")
    assert m["command"] == "calibrate" and m["config"]["tarp_roi"] == "0,0,3,3"
    assert m["outputs"]["header"]["sha256"] == file_sha256(tmp_path / "refl.hdr")
    assert m["inputs"]["asd"]["file"] == "asd.csv"


def test_calibrate_missing_roi_is_invalid(tmp_path, capsys, dn_inputs):
    cube, asd, _ = dn_inputs
    code, _, err = invoke(capsys, "calibrate", "--cube", cube, "--asd", asd, "-o", tmp_path / "r.hdr")
    assert code == 2
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["exit_code"] == 2 and doc["error"] == "ConfigError"


def test_stats_and_classify(tmp_path, capsys):
    values = np.empty((6, 9, len(WAVELENGTHS)))
    for i, kind in enumerate(["shade", "vegetation", "road"]):
        values[:, 3 * i:3 * i + 3] = signature(kind)
    write_cube(make_cube(values, WAVELENGTHS, Units.Reflectance), tmp_path / "c.hdr")
    code, _, err = invoke(capsys, "stats", "--cube", tmp_path / "c.hdr", "--roi", "3,0,3,6",
                          "--svg", tmp_path / "s.svg", "-o", tmp_path / "s.csv")
    assert code == 0, err
    assert (tmp_path / "s.svg").exists() and (tmp_path / "s.csv").read_text().count("\n") == len(WAVELENGTHS) + 1
    code, _, err = invoke(capsys, "classify", "--cube", tmp_path / "c.hdr", "--legend", tmp_path / "l.png",
                          "-o", tmp_path / "map.png")
    assert code == 0, err
    counts = (tmp_path / "map.counts.csv").read_text()
    assert "18" in counts and (tmp_path / "l.png").exists()


def test_usage_errors(capsys, tmp_path):
    code, _, err = invoke(capsys, "stats", "--bogus")
    assert code == 2 and json.loads(err)["error"] == "UsageError"
    code, _, err = invoke(capsys)
    assert code == 2
    code, _, err = invoke(capsys, "stats", "--cube", tmp_path / "none.hdr", "--roi", "0,0,1,1", "-o", tmp_path / "x.csv")
    assert code == 1 and json.loads(err)["error"] == "IoFailure"


def test_config_file_and_flag_precedence(tmp_path, capsys, dn_inputs):
    cube, asd, _ = dn_inputs
    (tmp_path / "c.toml").write_text('tarp_roi = "0,0,3,3"\ninterleave = "bip"\n')
    code, _, err = invoke(capsys, "calibrate", "--config", tmp_path / "c.toml", "--cube", cube, "--asd", asd,
                          "--interleave", "bil", "-o", tmp_path / "r.hdr")
    assert code == 0, err
    assert read_cube(tmp_path / "r.hdr").header.interleave == "bil"
    (tmp_path / "bad.toml").write_text("unknown_key = 1\n")
    code, _, err = invoke(capsys, "calibrate", "--config", tmp_path / "bad.toml", "--cube", cube, "--asd", asd,
                          "-o", tmp_path / "r2.hdr")
    assert code == 2 and "unknown_key" in json.loads(err)["message"]


def test_dump_config(capsys):
    code, out, _ = invoke(capsys, "--dump-config")
    assert code == 0 and "tau = 3.0" in out


def test_step_by_step_commands(tmp_path, capsys, scene_files):
    scene, p = scene_files
    code, _, err = invoke(capsys, "features", "--cube", p["cube"], "-o", tmp_path / "f.hff")
    assert code == 0, err
    code, _, err = invoke(capsys, "vocab", "--cloud", p["cloud"], "--descriptors", p["descriptors"], "--k", 200,
                          "-o", tmp_path / "v.hfv")
    assert code == 0, err
    pose = tmp_path / "pose.json"
    args = ["register", "--features", tmp_path / "f.hff", "--vocab", tmp_path / "v.hfv", "-o", pose]
    code, _, err = invoke(capsys, *args, "--figure", tmp_path / "reg.svg")
    assert code == 0, err
    first = pose.read_bytes()
    assert json.loads(first)["accepted"]
    code, _, _ = invoke(capsys, *args)
    assert pose.read_bytes() == first

    code, _, err = invoke(capsys, "fuse", "--cloud", p["cloud"], "--cube", p["cube"], "--pose", pose,
                          "-o", tmp_path / "fused")
    assert code == 0, err
    m = read_manifest(tmp_path / "fused.manifest.json")
    assert m["fused_points"] > 0 and m["outputs"]["ply"]["file"] == "fused.ply"

    (tmp_path / "geo.json").write_text(json.dumps({"origin_x": -5, "origin_y": 5, "pixel_dx": 0.1, "pixel_dy": -0.1}))
    code, _, err = invoke(capsys, "fuse-geo", "--cloud", p["cloud"], "--cube", p["cube"],
                          "--georef", tmp_path / "geo.json", "--ply-format", "ascii", "-o", tmp_path / "g")
    assert code == 0, err
    assert (tmp_path / "g.ply").read_bytes().startswith(b"ply\nformat ascii 1.0\n")


def test_register_not_accepted_exit_code(tmp_path, capsys, scene_files):
    _, p = scene_files
    invoke(capsys, "features", "--cube", p["cube"], "-o", tmp_path / "f.hff")
    invoke(capsys, "vocab", "--cloud", p["cloud"], "--descriptors", p["descriptors"], "--k", 200, "-o", tmp_path / "v.hfv")
    code, _, err = invoke(capsys, "register", "--features", tmp_path / "f.hff", "--vocab", tmp_path / "v.hfv",
                          "--n-min", "100000", "-o", tmp_path / "pose.json")
    assert code == 3
    doc = json.loads(err)
    assert doc["error"] == "NotAccepted" and doc["exit_code"] == 3
    pose = json.loads((tmp_path / "pose.json").read_text())
    assert pose["accepted"] is False
    code, _, err = invoke(capsys, "fuse", "--cloud", p["cloud"], "--cube", p["cube"],
                          "--pose", tmp_path / "pose.json", "-o", tmp_path / "fused")
    assert code == 3 and json.loads(err)["error"] == "ModelNotAccepted"


def _pipeline(capsys, p, out, threads):
    code, _, err = invoke(capsys, "pipeline", "--cube", p["cube"], "--cloud", p["cloud"],
                          "--descriptors", p["descriptors"], "--k", 200, "--threads", threads, "--seed", 7, "-o", out)
    assert code == 0, err
    return {f.name: f.read_bytes() for f in sorted(out.iterdir())}


def test_pipeline_deterministic_across_threads(tmp_path, capsys, scene_files):
    _, p = scene_files
    a = _pipeline(capsys, p, tmp_path / "a", 1)
    b = _pipeline(capsys, p, tmp_path / "b", 8)
    assert set(a) == {"vocabulary.hfv", "features.hff", "pose.json", "fused.ply", "fused.hfs", "manifest.json"}
    assert a == b
    m = json.loads(a["manifest.json"])
    assert m["seed"] == 7 and "threads" not in m["config"]


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "hyperfuse.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("hyperfuse ")
