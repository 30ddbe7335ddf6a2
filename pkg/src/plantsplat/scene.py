"""Gaussian scene representation, activations and covariance construction."""

from dataclasses import dataclass, field

import numpy as np

from . import sh as shlib
from .errors import InvalidParameterError


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def _as_quats(q):
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(~np.isfinite(norms)) or np.any(norms == 0.0):
        raise InvalidParameterError("quaternion must be finite with nonzero norm")
    return q / norms, norms


def quat_to_rotmat(q):
    """Rotation matrices for (w, x, y, z) quaternions; accepts (4,) or (N, 4).

    The input is normalized first, so any nonzero quaternion is valid.
    """
    qn, _ = _as_quats(q)
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    r = np.empty(qn.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[..., 0, 1] = 2.0 * (x * y - w * z)
    r[..., 0, 2] = 2.0 * (x * z + w * y)
    r[..., 1, 0] = 2.0 * (x * y + w * z)
    r[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[..., 1, 2] = 2.0 * (y * z - w * x)
    r[..., 2, 0] = 2.0 * (x * z - w * y)
    r[..., 2, 1] = 2.0 * (y * z + w * x)
    r[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return r


def rotmat_to_quat(r):
    """Inverse of :func:`quat_to_rotmat` for a single 3x3 rotation (w >= 0)."""
    r = np.asarray(r, dtype=np.float64)
    k = np.array([
        [r[0, 0] - r[1, 1] - r[2, 2], 0, 0, 0],
        [r[0, 1] + r[1, 0], r[1, 1] - r[0, 0] - r[2, 2], 0, 0],
        [r[0, 2] + r[2, 0], r[1, 2] + r[2, 1], r[2, 2] - r[0, 0] - r[1, 1], 0],
        [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1], r[0, 0] + r[1, 1] + r[2, 2]],
    ]) / 3.0
    vals, vecs = np.linalg.eigh(k)
    q = vecs[[3, 0, 1, 2], np.argmax(vals)]
    if q[0] < 0:
        q = -q
    return q


def covariance_from_params(rotation, log_scale):
    """Sigma = R S S^T R^T with S = diag(exp(log_scale)).

    Works on a single splat ((4,), (3,)) or batched ((N, 4), (N, 3)).
    """
    r = quat_to_rotmat(rotation)
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    m = r * s[..., None, :]
    cov = np.einsum("...ik,...jk->...ij", m, m)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def covariance_backward(rotations, log_scales, grad_cov):
    """Pull dL/dSigma (N, 3, 3) back to the raw quaternion and log-scale."""
    qn, norms = _as_quats(rotations)
    r = quat_to_rotmat(qn)
    s = np.exp(np.asarray(log_scales, dtype=np.float64))
    g = 0.5 * (grad_cov + np.swapaxes(grad_cov, -1, -2))
    m = r * s[:, None, :]
    grad_m = 2.0 * g @ m
    # M = R diag(s): dL/ds_k = sum_i dM_ik R_ik
    grad_s = np.einsum("nik,nik->nk", grad_m, r)
    grad_log_scale = grad_s * s
    gr = grad_m * s[:, None, :]

    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    gw = 2.0 * (-z * gr[:, 0, 1] + y * gr[:, 0, 2] + z * gr[:, 1, 0]
                - x * gr[:, 1, 2] - y * gr[:, 2, 0] + x * gr[:, 2, 1])
    gx = 2.0 * (y * gr[:, 0, 1] + z * gr[:, 0, 2] + y * gr[:, 1, 0] - 2.0 * x * gr[:, 1, 1]
                - w * gr[:, 1, 2] + z * gr[:, 2, 0] + w * gr[:, 2, 1] - 2.0 * x * gr[:, 2, 2])
    gy = 2.0 * (-2.0 * y * gr[:, 0, 0] + x * gr[:, 0, 1] + w * gr[:, 0, 2] + x * gr[:, 1, 0]
                + z * gr[:, 1, 2] - w * gr[:, 2, 0] + z * gr[:, 2, 1] - 2.0 * y * gr[:, 2, 2])
    gz = 2.0 * (-2.0 * z * gr[:, 0, 0] - w * gr[:, 0, 1] + x * gr[:, 0, 2] + w * gr[:, 1, 0]
                - 2.0 * z * gr[:, 1, 1] + y * gr[:, 1, 2] + x * gr[:, 2, 0] + y * gr[:, 2, 1])
    gq = np.stack([gw, gx, gy, gz], axis=1)
    grad_q = (gq - qn * np.sum(qn * gq, axis=1, keepdims=True)) / norms
    return grad_q, grad_log_scale


def _normalize_dirs(dirs):
    dirs = np.asarray(dirs, dtype=np.float64)
    norms = np.linalg.norm(dirs, axis=-1, keepdims=True)
    if np.any(norms == 0.0) or np.any(~np.isfinite(norms)):
        raise InvalidParameterError("view direction must be finite and nonzero")
    return dirs / norms, norms


def sh_colors(sh_coeffs, dirs, degree):
    """Batched color evaluation.

    ``sh_coeffs`` is (N, K, 3), ``dirs`` (N, 3) need not be normalized.
    Returns (rgb, cache) where cache feeds :func:`sh_colors_backward`.
    """
    unit, norms = _normalize_dirs(dirs)
    b = shlib.basis(unit, degree)
    k = b.shape[1]
    raw = np.einsum("nk,nkc->nc", b, sh_coeffs[:, :k, :]) + 0.5
    rgb = np.maximum(raw, 0.0)
    return rgb, (unit, norms, b, raw, degree)


def sh_colors_backward(sh_coeffs, cache, grad_rgb):
    """Returns (dL/dsh_coeffs with the full coefficient shape, dL/ddirs)."""
    unit, norms, b, raw, degree = cache
    g = np.where(raw > 0.0, grad_rgb, 0.0)
    k = b.shape[1]
    grad_sh = np.zeros(sh_coeffs.shape)
    grad_sh[:, :k, :] = b[:, :, None] * g[:, None, :]
    if degree == 0:
        return grad_sh, np.zeros_like(unit)
    jac = shlib.basis_jacobian(unit, degree)
    # d(color_c)/d(unit) = sum_k coeff_kc * jac_k
    grad_unit = np.einsum("nc,nkc,nkd->nd", g, sh_coeffs[:, :k, :], jac)
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    grad_dirs = (grad_unit - radial * unit) / norms
    return grad_sh, grad_dirs


def evaluate_sh(sh_coefficients, view_direction, degree=None):
    """Color of one splat seen along ``view_direction``.

    ``sh_coefficients`` has shape (K, 3); ``degree`` defaults to the highest
    degree the coefficients support. The DC term carries a +0.5 offset and
    the result is clamped at zero.
    """
    coeffs = np.asarray(sh_coefficients, dtype=np.float64)
    if degree is None:
        degree = int(round(np.sqrt(coeffs.shape[0]))) - 1
    rgb, _ = sh_colors(coeffs[None], np.asarray(view_direction, dtype=np.float64)[None], degree)
    return rgb[0]


@dataclass
class ActivatedSplat:
    opacity: float
    scales: np.ndarray
    rotation: np.ndarray


@dataclass
class GaussianSplat:
    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh_coefficients: np.ndarray


def activate(splat):
    values = [splat.position, splat.rotation, splat.log_scale,
              [splat.opacity_logit], splat.sh_coefficients]
    if not all(np.all(np.isfinite(np.asarray(v, dtype=np.float64))) for v in values):
        raise InvalidParameterError("splat parameters must be finite")
    q, _ = _as_quats(splat.rotation)
    return ActivatedSplat(
        opacity=float(sigmoid(splat.opacity_logit)),
        scales=np.exp(np.asarray(splat.log_scale, dtype=np.float64)),
        rotation=q,
    )


@dataclass
class GaussianScene:
    """Struct-of-arrays container for N splats.

    Parameters keep whatever float dtype they were created with; checkpoints
    are float32 so float32 scenes round-trip exactly.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    sh_degree: int = 3
    grad_accum: np.ndarray = field(default=None, repr=False)
    obs_count: np.ndarray = field(default=None, repr=False)
    # largest projected 3-sigma radius seen since the last refinement, as a
    # fraction of the image size
    max_screen: np.ndarray = field(default=None, repr=False)

    PARAM_NAMES = ("positions", "rotations", "log_scales", "opacity_logits", "sh")
    COUNTER_NAMES = ("grad_accum", "obs_count", "max_screen")

    def __post_init__(self):
        if not 0 <= self.sh_degree <= shlib.MAX_DEGREE:
            raise InvalidParameterError(f"sh_degree must be in 0..3, got {self.sh_degree}")
        n = self.positions.shape[0]
        k = shlib.num_coeffs(self.sh_degree)
        expected = {
            "positions": (n, 3),
            "rotations": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
            "sh": (n, k, 3),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InvalidParameterError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.grad_accum is None:
            self.grad_accum = np.zeros(n)
        if self.obs_count is None:
            self.obs_count = np.zeros(n, dtype=np.int64)
        if self.max_screen is None:
            self.max_screen = np.zeros(n)

    @classmethod
    def empty(cls, sh_degree=3, dtype=np.float32):
        k = shlib.num_coeffs(sh_degree)
        return cls(
            positions=np.zeros((0, 3), dtype),
            rotations=np.zeros((0, 4), dtype),
            log_scales=np.zeros((0, 3), dtype),
            opacity_logits=np.zeros((0,), dtype),
            sh=np.zeros((0, k, 3), dtype),
            sh_degree=sh_degree,
        )

    @classmethod
    def from_splats(cls, splats, sh_degree=3, dtype=np.float32):
        splats = list(splats)
        if not splats:
            return cls.empty(sh_degree, dtype)
        k = shlib.num_coeffs(sh_degree)
        sh = np.zeros((len(splats), k, 3), dtype)
        for i, s in enumerate(splats):
            c = np.asarray(s.sh_coefficients, dtype=np.float64).reshape(-1, 3)
            if c.shape[0] > k:
                raise InvalidParameterError("splat SH degree exceeds scene sh_degree")
            sh[i, : c.shape[0]] = c
        return cls(
            positions=np.array([s.position for s in splats], dtype),
            rotations=np.array([s.rotation for s in splats], dtype),
            log_scales=np.array([s.log_scale for s in splats], dtype),
            opacity_logits=np.array([s.opacity_logit for s in splats], dtype),
            sh=sh,
            sh_degree=sh_degree,
        )

    @classmethod
    def from_arrays(cls, positions, colors, scales, opacities, sh_degree=3,
                    rotations=None, dtype=np.float32):
        """Build a scene from activated values (rgb colors, linear scales,
        opacities in (0, 1))."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = positions.shape[0]
        scales = np.asarray(scales, dtype=np.float64)
        if scales.ndim < 2:
            # scalar or one isotropic scale per splat
            scales = np.repeat(np.broadcast_to(scales, (n,))[:, None], 3, axis=1)
        opacities = np.broadcast_to(np.asarray(opacities, dtype=np.float64), (n,))
        if rotations is None:
            rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        k = shlib.num_coeffs(sh_degree)
        sh = np.zeros((n, k, 3))
        sh[:, 0, :] = shlib.rgb_to_dc(np.broadcast_to(colors, (n, 3)))
        return cls(
            positions=positions.astype(dtype),
            rotations=np.asarray(rotations, dtype=np.float64).astype(dtype),
            log_scales=np.log(scales).astype(dtype),
            opacity_logits=logit(opacities).astype(dtype),
            sh=sh.astype(dtype),
            sh_degree=sh_degree,
        )

    def __len__(self):
        return self.positions.shape[0]

    @property
    def dtype(self):
        return self.positions.dtype

    @property
    def opacities(self):
        return sigmoid(self.opacity_logits)

    @property
    def scales(self):
        return np.exp(self.log_scales.astype(np.float64))

    def covariances(self):
        return covariance_from_params(self.rotations, self.log_scales)

    def splat(self, i):
        return GaussianSplat(
            position=self.positions[i].copy(),
            rotation=self.rotations[i].copy(),
            log_scale=self.log_scales[i].copy(),
            opacity_logit=self.opacity_logits[i].item(),
            sh_coefficients=self.sh[i].copy(),
        )

    def copy(self):
        return GaussianScene(
            positions=self.positions.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            opacity_logits=self.opacity_logits.copy(),
            sh=self.sh.copy(),
            sh_degree=self.sh_degree,
            grad_accum=self.grad_accum.copy(),
            obs_count=self.obs_count.copy(),
            max_screen=self.max_screen.copy(),
        )

    def astype(self, dtype):
        out = self.copy()
        for name in self.PARAM_NAMES:
            setattr(out, name, getattr(out, name).astype(dtype))
        return out

    def subset(self, index):
        return GaussianScene(
            positions=self.positions[index],
            rotations=self.rotations[index],
            log_scales=self.log_scales[index],
            opacity_logits=self.opacity_logits[index],
            sh=self.sh[index],
            sh_degree=self.sh_degree,
            grad_accum=self.grad_accum[index],
            obs_count=self.obs_count[index],
            max_screen=self.max_screen[index],
        )

    @staticmethod
    def concat(scenes):
        scenes = list(scenes)
        degree = scenes[0].sh_degree
        if any(s.sh_degree != degree for s in scenes):
            raise InvalidParameterError("cannot concatenate scenes with different sh_degree")
        return GaussianScene(
            **{name: np.concatenate([getattr(s, name) for s in scenes])
               for name in GaussianScene.PARAM_NAMES + GaussianScene.COUNTER_NAMES},
            sh_degree=degree,
        )

    def params(self):
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def check_finite(self):
        for name in self.PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidParameterError(f"non-finite values in {name}")

    def reset_counters(self):
        self.grad_accum = np.zeros(len(self))
        self.obs_count = np.zeros(len(self), dtype=np.int64)
        self.max_screen = np.zeros(len(self))


@dataclass
class CameraView:
    """Pinhole camera. Pixel (i, j) has its center at (j + 0.5, i + 0.5),
    the COLMAP convention."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidParameterError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidParameterError("principal point must lie inside the image")
        r = self.rotation
        if (np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6
                or abs(np.linalg.det(r) - 1.0) > 1e-6):
            raise InvalidParameterError("world_to_camera rotation must be orthonormal with det +1")

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def scaled(self, factor):
        """Camera for an image downsampled by an integer ``factor``."""
        w, h = self.width // factor, self.height // factor
        return CameraView(self.fx / factor, self.fy / factor, min(self.cx / factor, w - 1e-9),
                          min(self.cy / factor, h - 1e-9), w, h, self.rotation,
                          self.translation, self.name)

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, name=""):
        """Camera at ``eye`` looking at ``target``; image y points along -up."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        r = np.stack([right, down, forward])
        return cls(fx, fy, width / 2.0, height / 2.0, width, height, r, -r @ eye, name)
