import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hyperfuse.cloud import PointCloud
from hyperfuse.cube_io import Units, make_cube
from hyperfuse.errors import MalformedHeader, ModelNotAccepted, NonInvertibleGeoTransform, TruncatedPayload, UnitsMismatch
from hyperfuse.fusion import (FusedPaths, GeoRef, decode_spectra_block, encode_spectra_block, export_fused,
                              fuse_georef, fuse_projective, read_fused, round_half_away)
from hyperfuse.registration import ProjectionModel
from synthetic import make_scene, ortho_fixture


def small_cube(lines=30, samples=40, bands=4, units=Units.Reflectance):
    rng = np.random.default_rng(0)
    return make_cube(rng.random((lines, samples, bands)), [450, 550, 650, 800][:bands], units)


def pinhole():
    # camera at the origin looking down +z, principal point (20, 15)
    return ProjectionModel(np.array([[10.0, 0, 20, 0], [0, 10.0, 15, 0], [0, 0, 1.0, 0]]))


def test_point_gets_its_pixel():
    cube = small_cube()
    m = pinhole()
    # pixel (u=10, v=20): x = (10 - 20) * z / 10, y = (20 - 15) * z / 10
    cloud = PointCloud([[-1.0 * 3, 0.5 * 3, 3.0]])
    f = fuse_projective(cloud, cube, m)
    assert tuple(f.pixel[0]) == (10, 20)
    np.testing.assert_array_equal(f.spectrum(0), cube.values[20, 10].astype(np.float32))


def test_occlusion_on_one_ray():
    cube = small_cube()
    m = pinhole()
    ray = np.array([0.2, -0.1, 1.0])
    f = fuse_projective(PointCloud([ray * 9.0, ray * 5.0]), cube, m, z_tolerance=0.2)
    assert f.spectrum(1) is not None and not f.occluded[1]
    assert f.spectrum(0) is None and f.occluded[0]
    assert tuple(f.pixel[0]) == (-1, -1)


def test_within_tolerance_both_fused():
    cube = small_cube()
    ray = np.array([0.2, -0.1, 1.0])
    f = fuse_projective(PointCloud([ray * 5.0, ray * 5.1]), cube, pinhole(), z_tolerance=0.2)
    assert len(f.fused_ids) == 2 and not f.occluded.any()


def test_outside_and_behind_get_nothing():
    cube = small_cube()
    f = fuse_projective(PointCloud([[100.0, 0, 1], [0, 0, -5.0]]), cube, pinhole())
    assert len(f.fused_ids) == 0 and not f.occluded.any()


def test_refuses_unaccepted_and_dn():
    with pytest.raises(ModelNotAccepted):
        fuse_projective(PointCloud([[0, 0, 1.0]]), small_cube(), pinhole(), accepted=False)
    with pytest.raises(UnitsMismatch):
        fuse_projective(PointCloud([[0, 0, 1.0]]), small_cube(units=Units.DigitalNumber), pinhole())
    with pytest.raises(UnitsMismatch):
        fuse_georef(PointCloud([[0, 0, 1.0]]), small_cube(units=Units.DigitalNumber), GeoRef(0, 0, 1, 1))


def test_georef_half_pixel_rounds_away():
    cube = small_cube()
    geo = GeoRef(0.0, 0.0, 1.0, 1.0)
    f = fuse_georef(PointCloud([[1.5, 3.0, 0.0], [2.4999, 3.0, 0], [-0.5, 0, 0]]), cube, geo)
    assert f.pixel[0, 0] == 2 and f.pixel[1, 0] == 2
    assert f.spectrum(2) is None  # -0.5 rounds to -1, off the cube


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away([0.5, 1.5, -0.5, -1.5, 2.4999, 2.4999999999999]), [1, 2, -1, -2, 2, 3])


def test_georef_validation_and_inverse():
    with pytest.raises(NonInvertibleGeoTransform):
        GeoRef(0, 0, 0.0, 1.0)
    with pytest.raises(NonInvertibleGeoTransform):
        GeoRef(0, 0, 1.0, 1.0, rot_x=1.0, rot_y=1.0)
    g = GeoRef(10, 20, 0.5, -0.5, 0.1, 0.05)
    uv = np.array([[3.0, 4.0], [0.0, 0.0]])
    np.testing.assert_allclose(g.world_to_pixel(g.pixel_to_world(uv)), uv, atol=1e-12)


def test_georef_read(tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps({"origin_x": 1, "origin_y": 2, "pixel_dx": 0.5, "pixel_dy": -0.5}))
    assert GeoRef.read(p) == GeoRef(1, 2, 0.5, -0.5)
    p.write_text(json.dumps({"origin": 1}))
    with pytest.raises(MalformedHeader):
        GeoRef.read(p)


def test_scene_grid_all_recovered():
    scene = make_scene(0)
    f = fuse_projective(scene.cloud, scene.cube, ProjectionModel(scene.P))
    ids = scene.dense_ids
    ok = ~f.occluded[ids]
    assert ok.mean() > 0.9
    match = (f.pixel[ids] == scene.dense_pixels).all(axis=1)
    assert match[ok].mean() == 1.0


def test_projective_and_georef_agree():
    cube, geo, P = ortho_fixture()
    rng = np.random.default_rng(9)
    # pixel centres jittered within 0.4 px, all at one height: no occlusion possible
    lines, samples, _ = cube.shape
    uv = np.column_stack([rng.integers(0, samples, 300), rng.integers(0, lines, 300)]) + rng.uniform(-0.4, 0.4, (300, 2))
    xy = geo.pixel_to_world(uv)
    pts = np.column_stack([xy, rng.uniform(-0.05, 0.05, 300)])
    a = fuse_projective(PointCloud(pts), cube, ProjectionModel(P))
    b = fuse_georef(PointCloud(pts), cube, geo)
    visible = ~a.occluded
    np.testing.assert_array_equal(a.pixel[visible], b.pixel[visible])
    assert visible.sum() > 200


def test_spectra_block_size_and_round_trip(tmp_path):
    bands = 270
    cube = make_cube(np.random.default_rng(1).random((5, 5, bands)), np.linspace(400, 1000, bands), Units.Reflectance)
    f = fuse_georef(PointCloud([[0, 0, 0], [1, 1, 0], [2, 2, 1], [99, 99, 0]]), cube, GeoRef(0, 0, 1, 1))
    block = encode_spectra_block(f)
    assert len(block) == 4 + 3 * (4 + 270 * 4)
    ids, spectra = decode_spectra_block(block, bands)
    np.testing.assert_array_equal(ids, [0, 1, 2])
    assert spectra.tobytes() == f.spectra.tobytes()
    with pytest.raises(TruncatedPayload):
        decode_spectra_block(block[:-1], bands)
    with pytest.raises(MalformedHeader):
        decode_spectra_block(b"XXXX" + block[4:], bands)

    paths = FusedPaths.for_stem(tmp_path / "out")
    export_fused(f, paths)
    back = read_fused(paths, cube.wavelengths)
    np.testing.assert_array_equal(back.points, f.points)
    np.testing.assert_array_equal(back.pixel, f.pixel)
    np.testing.assert_array_equal(back.spectrum_index, f.spectrum_index)
    assert back.spectra.tobytes() == f.spectra.tobytes()


def test_empty_export(tmp_path):
    f = fuse_georef(PointCloud(np.zeros((0, 3))), small_cube(), GeoRef(0, 0, 1, 1))
    paths = FusedPaths.for_stem(tmp_path / "empty")
    export_fused(f, paths, "ascii")
    assert paths.spectra.read_bytes() == b"HFS1"
    assert len(read_fused(paths, small_cube().wavelengths).points) == 0


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-100, 100)), max_size=30),
       st.sampled_from(["ascii", "binary_little_endian"]))
def test_export_preserves_geometry(tmp_path_factory, pts, fmt):
    cube = small_cube()
    f = fuse_georef(PointCloud(np.array(pts, dtype=float).reshape(-1, 3)), cube, GeoRef(-5, -5, 0.5, 0.5))
    paths = FusedPaths.for_stem(tmp_path_factory.mktemp("f") / "x")
    export_fused(f, paths, fmt)
    back = read_fused(paths, cube.wavelengths)
    assert back.points.tobytes() == f.points.tobytes()
    assert back.spectra.tobytes() == f.spectra.tobytes()
