"""Loss and analytic gradients through render -> projection -> parameters."""

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError
from ..render.projection import max_eigenvalue, project_backward
from ..render.raster import RenderSettings, raster_backward, render
from .losses import photometric_loss


@dataclass
class GradientBuffer:
    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    # screen-space positional gradient norm per splat (NDC units), 0 if unseen
    mean2d_norm: np.ndarray
    visible: np.ndarray
    # projected 3-sigma radius over the larger image side
    screen_radius: np.ndarray = None

    @classmethod
    def zeros(cls, scene):
        n = len(scene)
        return cls(
            positions=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            log_scales=np.zeros((n, 3)),
            opacity_logits=np.zeros(n),
            sh=np.zeros(scene.sh.shape),
            mean2d_norm=np.zeros(n),
            visible=np.zeros(n, dtype=bool),
            screen_radius=np.zeros(n),
        )

    def as_dict(self):
        return {
            "positions": self.positions,
            "rotations": self.rotations,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "sh": self.sh,
        }


@dataclass
class BackwardResult:
    loss: float
    l1: float
    dssim: float
    grads: GradientBuffer
    render: object
    empty_mask: bool = False


def backward(scene, camera, target, alpha_img=None, lam=0.2, background=(0.0, 0.0, 0.0),
             settings=None, sh_degree=None, iteration=None):
    """Render, evaluate the (masked) loss and return analytic gradients.

    ``alpha_img`` of None selects the unmasked loss.
    """
    settings = settings or RenderSettings()
    out, state = render(scene, camera, background, settings, sh_degree, return_state=True)
    res = photometric_loss(target, out.rgb, lam, mask=alpha_img)
    if not np.isfinite(res.loss):
        where = f" at iteration {iteration}" if iteration is not None else ""
        raise NumericalError(f"non-finite loss{where}")
    grads = GradientBuffer.zeros(scene)
    proj = state.proj
    if len(proj) and not res.empty_mask:
        g_means, g_conics, g_colors, g_opac = raster_backward(state, res.grad)
        pg = project_backward(scene, camera, proj, state.proj_cache, g_means, g_conics,
                              g_colors, g_opac)
        idx = proj.index
        for name, value in pg.items():
            getattr(grads, name)[idx] = value
        ndc = g_means * np.array([0.5 * camera.width, 0.5 * camera.height])
        grads.mean2d_norm[idx] = np.linalg.norm(ndc, axis=1)
        grads.visible[idx] = True
        radius = 3.0 * np.sqrt(max_eigenvalue(proj.cov2d))
        grads.screen_radius[idx] = radius / max(camera.width, camera.height)
    return BackwardResult(res.loss, res.l1, res.dssim, grads, out, res.empty_mask)
