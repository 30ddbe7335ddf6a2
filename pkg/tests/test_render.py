import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plantsplat.errors import InvalidParameterError, OracleLimitError, ProjectionError
from plantsplat.render import (RenderSettings, Splat2D, frustum_cull, project, project_gaussian,
                               rasterize, render, render_reference)
from plantsplat.scene import GaussianScene, GaussianSplat
from plantsplat.synth import SynthSpec, generate_scene, ring_cameras

from conftest import axis_camera, random_scene


def _splat(x, y, depth, color, opacity, var=1.0):
    return Splat2D(np.array([x, y]), var * np.eye(2), depth, np.array(color, float), opacity)


def test_empty_list_gives_background():
    out = rasterize([], 8, 6, background=(0.2, 0.4, 0.6))
    assert out.rgb.shape == (6, 8, 3)
    np.testing.assert_array_equal(out.rgb, np.broadcast_to([0.2, 0.4, 0.6], (6, 8, 3)))
    assert np.all(out.alpha_acc == 0)


def test_single_splat_at_pixel_center():
    c, bg = np.array([1.0, 0.5, 0.25]), np.array([0.1, 0.2, 0.3])
    out = rasterize([_splat(2.5, 3.5, 1.0, c, 0.8)], 8, 8, background=bg)
    np.testing.assert_allclose(out.rgb[3, 2], 0.8 * c + 0.2 * bg, atol=1e-15)


def test_two_splats_front_to_back():
    c1, c2, bg = np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0])
    # listed back-first: ordering must come from depth
    splats = [_splat(4.5, 4.5, 2.0, c2, 0.5), _splat(4.5, 4.5, 1.0, c1, 0.5)]
    out = rasterize(splats, 8, 8, background=bg)
    np.testing.assert_allclose(out.rgb[4, 4], 0.5 * c1 + 0.25 * c2 + 0.25 * bg, atol=1e-15)
    assert out.alpha_acc[4, 4] == pytest.approx(0.75)


def test_zero_dimensions_rejected():
    with pytest.raises(InvalidParameterError):
        rasterize([], 0, 4)


def test_cull_basic():
    cam = axis_camera()
    s = GaussianScene.from_arrays([[0, 0, -1.0], [0, 0, 1.0]], [0.5, 0.5, 0.5], 0.01, 0.5)
    np.testing.assert_array_equal(frustum_cull(s, cam), [1])


def test_cull_matches_predicate(rng):
    cam = axis_camera(24, 20)
    s = random_scene(rng, 100, depth=(-1.0, 4.0), spread=3.0)
    margin = 1.2
    expect = []
    for i in range(len(s)):
        sp = s.splat(i)
        t = cam.world_to_camera(sp.position)
        if t[2] <= 0.01:
            continue
        p = project_gaussian(sp, cam)
        r = margin * 3.0 * np.sqrt(np.linalg.eigvalsh(p.cov2d)[-1])
        u, v = p.mean2d
        if -r <= u <= cam.width + r and -r <= v <= cam.height + r:
            expect.append(i)
    np.testing.assert_array_equal(frustum_cull(s, cam, 0.01, margin), expect)


def test_projection_on_axis():
    cam = axis_camera(32, 24, f=40.0)
    d, sigma = 2.0, 0.05
    sp = GaussianSplat(np.array([0, 0, d]), np.array([1.0, 0, 0, 0]), np.full(3, np.log(sigma)),
                       0.0, np.zeros((1, 3)))
    p = project_gaussian(sp, cam)
    np.testing.assert_allclose(p.mean2d, [cam.cx, cam.cy])
    expect = np.diag([sigma**2 * cam.fx**2 / d**2, sigma**2 * cam.fy**2 / d**2]) + 0.3 * np.eye(2)
    np.testing.assert_allclose(p.cov2d, expect, rtol=1e-12)


def test_projection_doubling_focal_doubles_x_extent():
    sp = GaussianSplat(np.array([0, 0, 2.0]), np.array([1.0, 0, 0, 0]), np.full(3, np.log(0.1)),
                       0.0, np.zeros((1, 3)))
    a = project_gaussian(sp, axis_camera(64, 64, f=50.0))
    cam2 = axis_camera(64, 64, f=50.0)
    cam2.fx = 100.0
    b = project_gaussian(sp, cam2)
    # the ellipse extent scales with sqrt of the un-dilated variance
    ext = lambda p: 3.0 * np.sqrt(p.cov2d[0, 0] - 0.3)
    assert ext(b) == pytest.approx(2 * ext(a), rel=1e-12)


def test_projection_behind_camera_raises():
    s = GaussianScene.from_arrays([[0, 0, -1.0]], [0.5, 0.5, 0.5], 0.01, 0.5)
    with pytest.raises(ProjectionError):
        project(s, axis_camera(), np.array([0]))


def test_render_empty_scene():
    out = render(GaussianScene.empty(), axis_camera(), (0.3, 0.3, 0.3))
    assert np.all(out.rgb == 0.3)


def test_single_splat_matches_reference_within_quantum(rng):
    s = random_scene(rng, 1)
    cam = axis_camera()
    a = render(s, cam, (0.1, 0.2, 0.3)).rgb
    b = render_reference(s, cam, (0.1, 0.2, 0.3)).rgb
    assert np.max(np.abs(a - b)) <= 1.0 / 255.0


def test_exact_settings_match_reference(rng):
    cam = axis_camera()
    for _ in range(5):
        s = random_scene(rng, 50)
        bg = rng.uniform(size=3)
        a = render(s, cam, bg, RenderSettings.exact())
        b = render_reference(s, cam, bg)
        assert np.max(np.abs(a.rgb - b.rgb)) < 1e-5
        assert np.max(np.abs(a.alpha_acc - b.alpha_acc)) < 1e-5


def test_synth_scene_matches_reference():
    spec = SynthSpec(surface_density=3000, image_width=32, image_height=32)
    synth = generate_scene(spec)
    fg = synth.scene.positions.astype(float)
    cam = ring_cameras(spec, 0.5 * (fg.min(0) + fg.max(0)))[5]
    a = render(synth.scene, cam, (0, 0, 0), RenderSettings.exact())
    b = render_reference(synth.scene, cam, (0, 0, 0))
    assert np.max(np.abs(a.rgb - b.rgb)) < 1e-5


def test_render_deterministic(rng):
    s = random_scene(rng, 60)
    a = render(s, axis_camera(), (0.5, 0.5, 0.5))
    b = render(s, axis_camera(), (0.5, 0.5, 0.5))
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.alpha_acc, b.alpha_acc)


def test_transmittance_telescoping(rng):
    """alpha_acc equals 1 - prod(1 - alpha') over the splats at each pixel."""
    s = random_scene(rng, 30)
    cam = axis_camera(16, 16)
    out = render(s, cam, (0, 0, 0), RenderSettings.exact())
    proj, _ = project(s, cam, np.arange(len(s)))
    for i, j in [(3, 4), (8, 8), (12, 1)]:
        d = np.array([j + 0.5, i + 0.5]) - proj.means2d
        inv = np.linalg.inv(proj.cov2d)
        power = -0.5 * np.einsum("ni,nij,nj->n", d, inv, d)
        a = np.minimum(proj.opacities * np.exp(power), 0.99)
        assert out.alpha_acc[i, j] == pytest.approx(1 - np.prod(1 - a), abs=1e-12)


def test_permutation_invariance(rng):
    s = random_scene(rng, 40)
    cam = axis_camera()
    perm = rng.permutation(len(s))
    a = render(s, cam, (0.2, 0.2, 0.2))
    b = render(s.subset(perm), cam, (0.2, 0.2, 0.2))
    assert np.array_equal(a.rgb, b.rgb)


@pytest.mark.parametrize("settings_", [RenderSettings(), RenderSettings.exact()])
def test_tile_size_independence(rng, settings_):
    s = random_scene(rng, 80)
    cam = axis_camera(40, 36)
    outs = [render(s, cam, (0.1, 0.2, 0.3), settings_.with_tile_size(t)) for t in (8, 16, 32)]
    for o in outs[1:]:
        assert np.max(np.abs(o.rgb - outs[0].rgb)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_background_identity_and_alpha_range(seed):
    rng = np.random.default_rng(seed)
    s = random_scene(rng, int(rng.integers(0, 30)))
    bg = rng.uniform(size=3)
    out = render(s, axis_camera(20, 20), bg)
    assert np.all((out.alpha_acc >= 0) & (out.alpha_acc <= 1))
    assert np.array_equal(out.rgb, out.splat_color + (1.0 - out.alpha_acc)[..., None] * bg)
    empty = out.alpha_acc == 0
    assert np.all(out.rgb[empty] == bg)


def test_oracle_limit(rng):
    s = random_scene(rng, 20)
    with pytest.raises(OracleLimitError):
        render_reference(s, axis_camera(), limit=10)
