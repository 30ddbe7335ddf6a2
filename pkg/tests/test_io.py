import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from plantsplat.errors import (DatasetError, InvalidParameterError, MissingMaskError, ParseError,
                               UnsupportedCameraModelError)
from plantsplat.io import (Manifest, area_downsample, import_ply, load_colmap_text, load_dataset,
                           load_rgba, split_dataset, split_indices, write_colmap_text)
from plantsplat.io.ply import export_ply
from plantsplat.render import render_reference
from plantsplat.scene import quat_to_rotmat

from conftest import random_scene

CAMERAS = """# Camera list with one line of data per camera:
#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]
1 PINHOLE 640 480 500.5 510.25 320.0 240.5
2 SIMPLE_PINHOLE 320 240 300.0 160.0 120.0
"""
IMAGES = """# Image list with two lines of data per image:
1 1.0 0.0 0.0 0.0 0.1 -0.2 3.0 1 a.png
10.0 20.0 -1

2 0.7071067811865476 0.0 0.7071067811865476 0.0 0.0 0.0 2.0 2 b.png

"""
POINTS = """# 3D point list
1 0.5 0.25 1.0 255 0 128 0.1 1 0 2 0
2 -1.0 2.0 0.0 0 255 0 0.2
"""


def _write(tmp_path, cameras=CAMERAS, images=IMAGES, points=POINTS):
    d = tmp_path / "colmap"
    d.mkdir(exist_ok=True)
    (d / "cameras.txt").write_text(cameras)
    (d / "images.txt").write_text(images)
    if points is not None:
        (d / "points3D.txt").write_text(points)
    return d


def test_colmap_golden(tmp_path):
    m = load_colmap_text(_write(tmp_path))
    views = m.views()
    assert len(views) == 2
    a, b = views
    assert (a.fx, a.fy, a.cx, a.cy, a.width, a.height) == (500.5, 510.25, 320.0, 240.5, 640, 480)
    np.testing.assert_array_equal(a.rotation, np.eye(3))
    np.testing.assert_array_equal(a.translation, [0.1, -0.2, 3.0])
    assert (b.fx, b.fy, b.cx, b.cy) == (300.0, 300.0, 160.0, 120.0)
    # 90 degrees about y
    np.testing.assert_allclose(b.rotation, [[0, 0, 1], [0, 1, 0], [-1, 0, 0]], atol=1e-12)
    np.testing.assert_allclose(m.points, [[0.5, 0.25, 1.0], [-1.0, 2.0, 0.0]])
    np.testing.assert_allclose(m.colors[0], [1.0, 0.0, 128 / 255])


def test_colmap_empty_points(tmp_path):
    m = load_colmap_text(_write(tmp_path, points="# nothing\n"))
    assert not m.has_points and m.points.shape == (0, 3)
    m = load_colmap_text(_write(tmp_path / "x" if False else tmp_path, points=None))


def test_colmap_unsupported_model(tmp_path):
    cams = CAMERAS.replace("SIMPLE_PINHOLE 320 240 300.0", "OPENCV 320 240 300.0 300.0")
    with pytest.raises(UnsupportedCameraModelError, match="OPENCV"):
        load_colmap_text(_write(tmp_path, cameras=cams))


def test_colmap_malformed_line_number(tmp_path):
    cams = CAMERAS.replace("500.5", "five")
    with pytest.raises(ParseError) as info:
        load_colmap_text(_write(tmp_path, cameras=cams))
    assert info.value.line == 3


def test_colmap_write_read_roundtrip(tmp_path, rng):
    m = load_colmap_text(_write(tmp_path))
    out = tmp_path / "again"
    write_colmap_text(out, m.views(), m.points, m.colors)
    m2 = load_colmap_text(out)
    for a, b in zip(m.views(), m2.views()):
        assert (a.fx, a.fy, a.cx, a.cy) == (b.fx, b.fy, b.cx, b.cy)
        np.testing.assert_allclose(a.rotation, b.rotation, atol=1e-15)
        np.testing.assert_array_equal(a.translation, b.translation)


def _png(path, rgba):
    Image.fromarray(rgba.astype(np.uint8), "RGBA" if rgba.shape[2] == 4 else "RGB").save(path)


def test_load_rgba_white(tmp_path):
    _png(tmp_path / "w.png", np.full((4, 4, 4), 255))
    f = load_rgba(tmp_path / "w.png", 4)
    assert f.rgb.shape == (1, 1, 3)
    np.testing.assert_array_equal(f.rgb, 1.0)
    np.testing.assert_array_equal(f.alpha, 1.0)


def test_load_rgba_checkerboard_alpha(tmp_path):
    img = np.full((4, 4, 4), 200)
    img[..., 3] = 255 * ((np.indices((4, 4)).sum(axis=0) % 2))
    _png(tmp_path / "c.png", img)
    f = load_rgba(tmp_path / "c.png", 2)
    np.testing.assert_array_equal(f.alpha, 1.0)


def test_load_rgba_missing_alpha(tmp_path):
    _png(tmp_path / "rgb.png", np.full((4, 4, 3), 10))
    with pytest.raises(MissingMaskError):
        load_rgba(tmp_path / "rgb.png", 1)
    assert load_rgba(tmp_path / "rgb.png", 1, require_alpha=False).alpha is None


def naive_downsample(img, f):
    h, w = img.shape[:2]
    oh, ow = h // f, w // f
    out = np.zeros((oh, ow) + img.shape[2:])
    for i in range(oh):
        for j in range(ow):
            y1 = h if i == oh - 1 else (i + 1) * f
            x1 = w if j == ow - 1 else (j + 1) * f
            out[i, j] = img[i * f:y1, j * f:x1].mean(axis=(0, 1))
    return out


def test_downsample_odd_dimensions(rng):
    img = rng.uniform(size=(11, 14, 3))
    for f in (2, 3, 4):
        out = area_downsample(img, f)
        assert out.shape == (11 // f, 14 // f, 3)
        np.testing.assert_allclose(out, naive_downsample(img, f), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_downsample_preserves_mean(f, bh, bw, seed):
    img = np.random.default_rng(seed).uniform(size=(f * bh, f * bw, 3))
    assert abs(area_downsample(img, f).mean() - img.mean()) < 1e-6


def test_downsample_too_small():
    with pytest.raises(InvalidParameterError):
        area_downsample(np.zeros((3, 3)), 4)


def test_split_examples():
    tr, te = split_indices(10, 0.6, 0)
    assert (len(tr), len(te)) == (6, 4)
    tr2, te2 = split_indices(10, 0.6, 0)
    assert np.array_equal(tr, tr2) and np.array_equal(te, te2)
    tr, te = split_indices(15, 0.6, 1)
    assert (len(tr), len(te)) == (9, 6)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(15))
    with pytest.raises(DatasetError):
        split_indices(1)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 200), st.integers(0, 1000))
def test_split_fraction_within_one_frame(n, seed):
    tr, te = split_indices(n, 0.6, seed)
    assert abs(len(tr) - 0.6 * n) <= 1 and len(te) >= 1


def test_split_dataset_pure():
    a = split_dataset([f"f{i}" for i in range(12)], 0.6, 4)
    b = split_dataset([f"f{i}" for i in range(12)], 0.6, 4)
    assert [r.split for r in a] == [r.split for r in b]


def test_ply_truncated(tmp_path, rng):
    export_ply(random_scene(rng, 10, dtype=np.float32), tmp_path / "s.ply")
    data = (tmp_path / "s.ply").read_bytes()
    (tmp_path / "t.ply").write_bytes(data[:-37])
    with pytest.raises(ParseError) as info:
        import_ply(tmp_path / "t.ply")
    assert info.value.offset is not None


def test_foreign_ply_point_cloud(tmp_path):
    pts = np.array([[0, 0, 0], [1, 2, 3]], dtype="<f4")
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property float opacity\nend_header\n").encode()
    body = b"".join(struct.pack("<4f", *p, 0.5) for p in pts)
    (tmp_path / "f.ply").write_bytes(header + body)
    c = import_ply(tmp_path / "f.ply")
    assert not c.is_scene
    np.testing.assert_array_equal(c.points, pts)


def test_ascii_ply(tmp_path):
    (tmp_path / "a.ply").write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n"
                                    "property float y\nproperty float z\nend_header\n"
                                    "0 0 0\n1 2 3\n")
    np.testing.assert_array_equal(import_ply(tmp_path / "a.ply").points, [[0, 0, 0], [1, 2, 3]])


def test_cloud_ply_roundtrip(tmp_path, rng):
    pts = rng.normal(size=(20, 3))
    export_ply(pts, tmp_path / "c.ply", colors=rng.uniform(size=(20, 3)))
    c = import_ply(tmp_path / "c.ply")
    np.testing.assert_array_equal(c.points, pts.astype(np.float32))


def test_manifest_roundtrip_and_schema(tmp_path):
    from plantsplat.io.manifest import FrameRecord
    m = Manifest([FrameRecord("a.png", 1, [1.0, 0, 0, 0], [0, 0, 1.0], "train")],
                 {1: {"model": "PINHOLE", "width": 8, "height": 8,
                      "intrinsics": [8.0, 8.0, 4.0, 4.0]}}, 2, 7)
    m.save(tmp_path / "m.json")
    m2 = Manifest.load(tmp_path / "m.json")
    assert m2 == m
    assert m2.to_json() == m.to_json()
    bad = m.to_json().replace('"schema_version": 1', '"schema_version": 99')
    (tmp_path / "b.json").write_text(bad)
    with pytest.raises(ParseError):
        Manifest.load(tmp_path / "b.json")
    m.frames[0].camera_id = 5
    with pytest.raises(DatasetError):
        m.validate()


def test_synth_rerender_from_exported_poses(tmp_path):
    """Images written to disk and poses read back give the same render."""
    from plantsplat.synth import SynthSpec, generate_dataset, write_dataset
    spec = SynthSpec(surface_density=3000, image_width=24, image_height=24)
    data = generate_dataset(spec)
    path = write_dataset(data, tmp_path / "ds")
    ds, manifest = load_dataset(path)
    assert len(ds.train) + len(ds.test) == 12
    views = {v.name: v for v in ds.train + ds.test}
    for orig in data.views:
        loaded = views[orig.name]
        a = render_reference(data.synth.scene, orig.camera, spec.background).rgb
        b = render_reference(data.synth.scene, loaded.camera, spec.background).rgb
        np.testing.assert_array_equal(np.round(a * 255), np.round(b * 255))
        np.testing.assert_array_equal(loaded.frame.alpha, orig.frame.alpha)
        np.testing.assert_allclose(loaded.frame.rgb, orig.frame.rgb, atol=0.5 / 255)
