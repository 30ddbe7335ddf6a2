"""Screen-space projection of 3D Gaussians (EWA affine approximation) and
its adjoint."""

from dataclasses import dataclass

import numpy as np

from ..errors import ProjectionError
from ..scene import covariance_backward, covariance_from_params, sh_colors, sh_colors_backward, sigmoid

LOWPASS = 0.3
# Jacobian evaluation point is clamped to 1.3x the half field of view.
FOV_CLAMP = 1.3


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float


@dataclass
class ProjectedSplats:
    """Struct-of-arrays form of a list of :class:`Splat2D`.

    ``index`` maps each row back to the splat it came from in the scene.
    """

    means2d: np.ndarray
    cov2d: np.ndarray
    conics: np.ndarray
    depths: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    index: np.ndarray

    def __len__(self):
        return self.means2d.shape[0]

    def to_list(self):
        return [Splat2D(self.means2d[i], self.cov2d[i], float(self.depths[i]),
                        self.colors[i], float(self.opacities[i])) for i in range(len(self))]

    @classmethod
    def from_list(cls, splats):
        splats = list(splats)
        n = len(splats)
        means = np.array([s.mean2d for s in splats], dtype=np.float64).reshape(n, 2)
        cov = np.array([s.cov2d for s in splats], dtype=np.float64).reshape(n, 2, 2)
        return cls(
            means2d=means,
            cov2d=cov,
            conics=conics_from_cov(cov),
            depths=np.array([s.depth for s in splats], dtype=np.float64).reshape(n),
            colors=np.array([s.color for s in splats], dtype=np.float64).reshape(n, 3),
            opacities=np.array([s.opacity for s in splats], dtype=np.float64).reshape(n),
            index=np.arange(n),
        )


def conics_from_cov(cov2d):
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    if np.any(det <= 0.0):
        raise ProjectionError("2D covariance is not positive definite")
    return np.stack([c / det, -b / det, a / det], axis=1)


def max_eigenvalue(cov2d):
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    return mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))


def _camera_space(scene, camera, index):
    pos = scene.positions[index].astype(np.float64)
    return pos @ camera.rotation.T + camera.translation


def _jacobian(t, camera):
    limx = FOV_CLAMP * 0.5 * camera.width / camera.fx
    limy = FOV_CLAMP * 0.5 * camera.height / camera.fy
    z = t[:, 2]
    xz = np.clip(t[:, 0] / z, -limx, limx)
    yz = np.clip(t[:, 1] / z, -limy, limy)
    free_x = np.abs(t[:, 0] / z) < limx
    free_y = np.abs(t[:, 1] / z) < limy
    xc, yc = xz * z, yz * z
    n = t.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 0, 2] = -camera.fx * xc / (z * z)
    jac[:, 1, 1] = camera.fy / z
    jac[:, 1, 2] = -camera.fy * yc / (z * z)
    return jac, xc, yc, free_x, free_y


def project_cov(cov3d, t, camera):
    jac, *_ = _jacobian(t, camera)
    m = jac @ camera.rotation
    cov2d = m @ cov3d @ np.swapaxes(m, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    return cov2d


def frustum_cull(scene, camera, near=0.01, margin=1.0, sigma_extent=3.0):
    """Indices of splats in front of ``near`` whose projected mean lies inside
    the image grown by ``margin`` times their ``sigma_extent`` screen radius.

    ``margin=None`` keeps everything beyond the near plane.
    """
    n = len(scene)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    t = _camera_space(scene, camera, slice(None))
    front = np.nonzero(t[:, 2] > near)[0]
    if margin is None or front.size == 0:
        return front
    t = t[front]
    cov2d = project_cov(scene.covariances()[front], t, camera)
    radius = margin * sigma_extent * np.sqrt(max_eigenvalue(cov2d))
    u = camera.fx * t[:, 0] / t[:, 2] + camera.cx
    v = camera.fy * t[:, 1] / t[:, 2] + camera.cy
    inside = ((u >= -radius) & (u <= camera.width + radius)
              & (v >= -radius) & (v <= camera.height + radius))
    return front[inside]


def project_gaussian(splat, camera, sh_degree=None, near=0.01):
    """Project one :class:`~plantsplat.scene.GaussianSplat`."""
    from ..scene import GaussianScene

    coeffs = np.asarray(splat.sh_coefficients, dtype=np.float64).reshape(-1, 3)
    degree = int(round(np.sqrt(coeffs.shape[0]))) - 1
    scene = GaussianScene.from_splats([splat], sh_degree=degree, dtype=np.float64)
    proj, _ = project(scene, camera, np.array([0]), sh_degree, near)
    return proj.to_list()[0]


def project(scene, camera, index, sh_degree=None, near=0.01):
    """Project the splats listed in ``index``.

    Returns (ProjectedSplats, cache); the cache feeds :func:`project_backward`.
    """
    index = np.asarray(index, dtype=np.int64)
    if sh_degree is None:
        sh_degree = scene.sh_degree
    t = _camera_space(scene, camera, index)
    z = t[:, 2]
    if np.any(z <= near):
        raise ProjectionError("splat depth must exceed the near plane")
    cov3d = covariance_from_params(scene.rotations[index], scene.log_scales[index])
    jac, xc, yc, free_x, free_y = _jacobian(t, camera)
    m = jac @ camera.rotation
    cov2d = m @ cov3d @ np.swapaxes(m, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    means2d = np.stack([camera.fx * t[:, 0] / z + camera.cx,
                        camera.fy * t[:, 1] / z + camera.cy], axis=1)
    dirs = scene.positions[index].astype(np.float64) - camera.center
    sh = scene.sh[index].astype(np.float64)
    colors, sh_cache = sh_colors(sh, dirs, sh_degree)
    opac = sigmoid(scene.opacity_logits[index])
    proj = ProjectedSplats(
        means2d=means2d,
        cov2d=cov2d,
        conics=conics_from_cov(cov2d),
        depths=z.copy(),
        colors=colors,
        opacities=opac,
        index=index,
    )
    cache = dict(t=t, cov3d=cov3d, jac=jac, m=m, xc=xc, yc=yc, free_x=free_x,
                 free_y=free_y, sh=sh, sh_cache=sh_cache)
    return proj, cache


def project_backward(scene, camera, proj, cache, g_means, g_conics, g_colors, g_opac):
    """Chain screen-space gradients back to scene parameters.

    ``g_conics`` holds derivatives w.r.t. the three distinct conic entries
    (a, b, c) of [[a, b], [b, c]]. Returns a dict keyed like the scene's
    parameter arrays, for the projected rows only.
    """
    index = proj.index
    n = len(index)
    fx, fy = camera.fx, camera.fy
    w_rot = camera.rotation
    t, m, cov3d = cache["t"], cache["m"], cache["cov3d"]
    z = t[:, 2]

    # conic = cov^-1  ->  dL/dcov = -Q G Q with G the symmetric matrix gradient
    q = np.empty((n, 2, 2))
    q[:, 0, 0], q[:, 0, 1], q[:, 1, 0], q[:, 1, 1] = (
        proj.conics[:, 0], proj.conics[:, 1], proj.conics[:, 1], proj.conics[:, 2])
    gq = np.empty((n, 2, 2))
    gq[:, 0, 0] = g_conics[:, 0]
    gq[:, 0, 1] = gq[:, 1, 0] = 0.5 * g_conics[:, 1]
    gq[:, 1, 1] = g_conics[:, 2]
    g_cov2d = -q @ gq @ q

    # cov2d = M cov3d M^T, M = J W
    mt = np.swapaxes(m, 1, 2)
    g_cov3d = mt @ g_cov2d @ m
    g_m = 2.0 * g_cov2d @ m @ cov3d
    g_jac = g_m @ w_rot.T

    xc, yc = cache["xc"], cache["yc"]
    kx = np.where(cache["free_x"], 2.0, 1.0)
    ky = np.where(cache["free_y"], 2.0, 1.0)
    z2, z3 = z * z, z * z * z
    g_t = np.zeros((n, 3))
    g_t[:, 0] = np.where(cache["free_x"], g_jac[:, 0, 2] * (-fx / z2), 0.0)
    g_t[:, 1] = np.where(cache["free_y"], g_jac[:, 1, 2] * (-fy / z2), 0.0)
    g_t[:, 2] = (g_jac[:, 0, 0] * (-fx / z2) + g_jac[:, 1, 1] * (-fy / z2)
                 + g_jac[:, 0, 2] * kx * fx * xc / z3 + g_jac[:, 1, 2] * ky * fy * yc / z3)

    # screen mean
    g_t[:, 0] += g_means[:, 0] * fx / z
    g_t[:, 1] += g_means[:, 1] * fy / z
    g_t[:, 2] += -g_means[:, 0] * fx * t[:, 0] / z2 - g_means[:, 1] * fy * t[:, 1] / z2

    g_pos = g_t @ w_rot
    g_sh, g_dirs = sh_colors_backward(cache["sh"], cache["sh_cache"], g_colors)
    g_pos += g_dirs

    g_rot, g_log_scale = covariance_backward(
        scene.rotations[index], scene.log_scales[index], g_cov3d)
    alpha = proj.opacities
    return {
        "positions": g_pos,
        "rotations": g_rot,
        "log_scales": g_log_scale,
        "opacity_logits": g_opac * alpha * (1.0 - alpha),
        "sh": g_sh,
    }
