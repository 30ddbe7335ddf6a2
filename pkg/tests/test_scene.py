import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from plantsplat import sh as shlib
from plantsplat.errors import InvalidParameterError
from plantsplat.io.ply import export_ply, load_scene
from plantsplat.scene import (CameraView, GaussianScene, GaussianSplat, activate,
                              covariance_from_params, evaluate_sh, quat_to_rotmat)

from conftest import random_scene

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199


def test_identity_covariance():
    cov = covariance_from_params(np.array([1.0, 0, 0, 0]), np.zeros(3))
    np.testing.assert_allclose(cov, np.eye(3), atol=1e-15)


def test_scaled_covariance():
    cov = covariance_from_params(np.array([1.0, 0, 0, 0]), np.array([np.log(2.0), 0, 0]))
    np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-14)


def test_covariance_eigenvalues_match_scales(rng):
    for _ in range(20):
        q = rng.normal(size=4)
        v = rng.uniform(-2, 1, 3)
        cov = covariance_from_params(q, v)
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(np.exp(2 * v)),
                                   rtol=1e-10)


def test_zero_quaternion_rejected():
    with pytest.raises(InvalidParameterError):
        covariance_from_params(np.zeros(4), np.zeros(3))


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(
    lambda q: np.linalg.norm(q) > 1e-3), arrays(np.float64, 3, elements=finite))
def test_covariance_symmetric_psd_and_double_cover(q, v):
    cov = covariance_from_params(q, v)
    assert np.max(np.abs(cov - cov.T)) <= 1e-12 * np.max(np.abs(cov))
    assert np.min(np.linalg.eigvalsh(cov)) >= -1e-12 * np.max(np.abs(cov))
    assert np.array_equal(cov, covariance_from_params(-q, v))


def test_rotation_matrix_orthonormal(rng):
    for q in rng.normal(size=(10, 4)):
        r = quat_to_rotmat(q)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)


def test_sh_degree0_view_independent(rng):
    c = np.array([[0.3, -0.2, 0.1]])
    out = [evaluate_sh(c, d / np.linalg.norm(d)) for d in rng.normal(size=(5, 3))]
    for o in out[1:]:
        np.testing.assert_array_equal(o, out[0])
    np.testing.assert_allclose(out[0], np.maximum(SH_C0 * c[0] + 0.5, 0.0))


def test_sh_zero_coefficients_give_half():
    np.testing.assert_allclose(evaluate_sh(np.zeros((16, 3)), np.array([0, 0, 1.0])),
                               [0.5, 0.5, 0.5])


def test_sh_degree1_antipodal():
    coeffs = np.zeros((4, 3))
    coeffs[0] = [1.0, 1.0, 1.0]
    coeffs[1:] = [[0.1, 0.2, 0.3], [0.05, -0.1, 0.2], [-0.2, 0.1, 0.0]]
    d = np.array([0.3, -0.5, 0.8])
    d /= np.linalg.norm(d)
    x, y, z = d
    # basis (-y, z, -x) scaled by the degree-1 constant
    lin = SH_C1 * (-y * coeffs[1] + z * coeffs[2] - x * coeffs[3])
    diff = evaluate_sh(coeffs, d) - evaluate_sh(coeffs, -d)
    np.testing.assert_allclose(diff, 2 * lin, atol=1e-14)


def test_sh_zero_direction_rejected():
    with pytest.raises(InvalidParameterError):
        evaluate_sh(np.zeros((4, 3)), np.zeros(3))


def test_activate_values():
    s = GaussianSplat(np.zeros(3), np.array([2.0, 0, 0, 0]), np.array([-1.0, 0.0, 1.0]), 0.0,
                      np.zeros((1, 3)))
    a = activate(s)
    assert a.opacity == 0.5
    np.testing.assert_allclose(a.scales, [0.36787944, 1.0, 2.71828183], rtol=1e-7)
    np.testing.assert_allclose(a.rotation, [1, 0, 0, 0])
    s.opacity_logit = -800.0
    assert 0.0 <= activate(s).opacity < 1e-300
    s.log_scale = np.array([np.nan, 0, 0])
    with pytest.raises(InvalidParameterError):
        activate(s)


def test_scene_shape_validation():
    with pytest.raises(InvalidParameterError):
        GaussianScene(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 3)), np.zeros(3),
                      np.zeros((2, 1, 3)), sh_degree=0)


def test_subset_concat_keep_counters(rng):
    s = random_scene(rng, 6)
    s.grad_accum[:] = np.arange(6)
    sub = s.subset(np.array([1, 4]))
    np.testing.assert_array_equal(sub.grad_accum, [1, 4])
    both = GaussianScene.concat([sub, s.subset(np.array([0]))])
    assert len(both) == 3
    np.testing.assert_array_equal(both.positions[2], s.positions[0])


def test_ply_roundtrip_bit_exact(rng, tmp_path):
    for deg in (0, 3):
        s = random_scene(rng, 40, sh_degree=deg, dtype=np.float32)
        export_ply(s, tmp_path / "s.ply")
        t = load_scene(tmp_path / "s.ply")
        assert t.sh_degree == deg
        for name in GaussianScene.PARAM_NAMES:
            assert np.array_equal(getattr(s, name), getattr(t, name)), name


def test_camera_validation():
    with pytest.raises(InvalidParameterError):
        CameraView(-1, 1, 0, 0, 4, 4, np.eye(3), np.zeros(3))
    with pytest.raises(InvalidParameterError):
        CameraView(1, 1, 4, 0, 4, 4, np.eye(3), np.zeros(3))
    with pytest.raises(InvalidParameterError):
        CameraView(1, 1, 0, 0, 4, 4, np.diag([1, 1, -1.0]), np.zeros(3))


def test_sh_num_coeffs():
    assert [shlib.num_coeffs(d) for d in range(4)] == [1, 4, 9, 16]
