"""Tile-based alpha compositing and the brute-force reference renderer."""

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import InvalidParameterError, OracleLimitError
from . import kernels
from .projection import ProjectedSplats, frustum_cull, project

ORACLE_LIMIT = 10_000


@dataclass(frozen=True)
class RenderSettings:
    tile_size: int = 16
    near: float = 0.01
    alpha_min: float = 1.0 / 255.0
    alpha_max: float = 0.99
    t_min: float = 1e-4
    cull_margin: float = 1.2

    @classmethod
    def exact(cls, tile_size=16):
        """No per-splat skipping, no early termination, no lateral culling.

        Only the opacity clamp remains, which is what the reference renderer
        applies too.
        """
        return cls(tile_size=tile_size, alpha_min=0.0, t_min=0.0)

    def with_tile_size(self, tile_size):
        return replace(self, tile_size=tile_size)


@dataclass
class RenderOutput:
    rgb: np.ndarray
    alpha_acc: np.ndarray
    splat_color: np.ndarray
    depth: np.ndarray
    background: np.ndarray = field(default=None)


@dataclass
class RasterState:
    """What the backward pass needs from a forward pass."""

    proj: ProjectedSplats
    tile_start: np.ndarray
    pairs: np.ndarray
    tiles_x: int
    trans: np.ndarray
    last: np.ndarray
    width: int
    height: int
    settings: RenderSettings
    background: np.ndarray
    proj_cache: dict = None


def _check_dims(width, height, tile_size):
    if width <= 0 or height <= 0:
        raise InvalidParameterError("image dimensions must be positive")
    if tile_size <= 0:
        raise InvalidParameterError("tile_size must be positive")


def _background(background):
    bg = np.asarray(background, dtype=np.float64).reshape(-1)
    if bg.size == 1:
        bg = np.repeat(bg, 3)
    if bg.shape != (3,):
        raise InvalidParameterError("background must be an rgb triple")
    return bg


def tile_rects(proj, width, height, tile_size, alpha_min):
    """Inclusive tile rectangle covered by each splat's footprint.

    The footprint is the ellipse on which the splat's pixel opacity drops to
    ``alpha_min``; pixels outside it would be skipped anyway, so binning by it
    loses nothing. With ``alpha_min == 0`` every splat covers every tile.
    """
    n = len(proj)
    tiles_x = -(-width // tile_size)
    tiles_y = -(-height // tile_size)
    lo = np.zeros((n, 2), dtype=np.int64)
    hi = np.empty((n, 2), dtype=np.int64)
    hi[:, 0] = tiles_x - 1
    hi[:, 1] = tiles_y - 1
    if alpha_min <= 0.0 or n == 0:
        return lo, hi, tiles_x, tiles_y
    with np.errstate(divide="ignore"):
        r2 = 2.0 * np.log(proj.opacities / alpha_min)
    r2 = r2 * (1.0 + 1e-9) + 1e-9
    alive = r2 > 0.0
    r2 = np.where(alive, r2, 0.0)
    hx = np.sqrt(r2 * proj.cov2d[:, 0, 0])
    hy = np.sqrt(r2 * proj.cov2d[:, 1, 1])
    mx, my = proj.means2d[:, 0], proj.means2d[:, 1]
    j_lo = np.ceil(mx - hx - 0.5)
    j_hi = np.floor(mx + hx - 0.5)
    i_lo = np.ceil(my - hy - 0.5)
    i_hi = np.floor(my + hy - 0.5)
    empty = ((~alive) | (j_lo > j_hi) | (i_lo > i_hi) | (j_hi < 0) | (i_hi < 0)
             | (j_lo > width - 1) | (i_lo > height - 1))
    j_lo = np.clip(j_lo, 0, width - 1).astype(np.int64)
    j_hi = np.clip(j_hi, 0, width - 1).astype(np.int64)
    i_lo = np.clip(i_lo, 0, height - 1).astype(np.int64)
    i_hi = np.clip(i_hi, 0, height - 1).astype(np.int64)
    lo[:, 0] = j_lo // tile_size
    lo[:, 1] = i_lo // tile_size
    hi[:, 0] = j_hi // tile_size
    hi[:, 1] = i_hi // tile_size
    lo[empty] = 1
    hi[empty] = 0
    return lo, hi, tiles_x, tiles_y


def depth_order(depths):
    """Front-to-back order, ties broken by row index."""
    return np.argsort(depths, kind="stable")


def rasterize_projected(proj, width, height, background, settings=None):
    settings = settings or RenderSettings()
    _check_dims(width, height, settings.tile_size)
    bg = _background(background)
    ts = settings.tile_size
    lo, hi, tiles_x, tiles_y = tile_rects(proj, width, height, ts, settings.alpha_min)
    order = depth_order(proj.depths)
    tile_start, tile_end, pairs = kernels.bin_splats(order, lo, hi, tiles_x, tiles_x * tiles_y)
    n = len(proj)
    means = np.ascontiguousarray(proj.means2d, dtype=np.float64).reshape(n, 2)
    conics = np.ascontiguousarray(proj.conics, dtype=np.float64).reshape(n, 3)
    colors = np.ascontiguousarray(proj.colors, dtype=np.float64).reshape(n, 3)
    opac = np.ascontiguousarray(proj.opacities, dtype=np.float64).reshape(n)
    depths = np.ascontiguousarray(proj.depths, dtype=np.float64).reshape(n)
    splat_color, depth, trans, last = kernels.raster_forward(
        width, height, ts, tiles_x, tile_start, tile_end, pairs, means, conics, colors,
        opac, depths, settings.alpha_min, settings.alpha_max, settings.t_min)
    alpha_acc = 1.0 - trans
    rgb = splat_color + (1.0 - alpha_acc)[..., None] * bg
    out = RenderOutput(rgb=rgb, alpha_acc=alpha_acc, splat_color=splat_color, depth=depth,
                       background=bg)
    state = RasterState(proj=proj, tile_start=tile_start, pairs=pairs, tiles_x=tiles_x,
                        trans=trans, last=last, width=width, height=height,
                        settings=settings, background=bg)
    return out, state


def rasterize(splats2d, width, height, tile_size=16, background=(0.0, 0.0, 0.0), *,
              alpha_min=1.0 / 255.0, alpha_max=0.99, t_min=1e-4):
    """Composite screen-space splats front to back over ``background``.

    ``splats2d`` is a list of :class:`Splat2D` or a :class:`ProjectedSplats`.
    """
    if not isinstance(splats2d, ProjectedSplats):
        splats2d = ProjectedSplats.from_list(splats2d)
    settings = RenderSettings(tile_size=tile_size, alpha_min=alpha_min,
                              alpha_max=alpha_max, t_min=t_min)
    out, _ = rasterize_projected(splats2d, width, height, background, settings)
    return out


def raster_backward(state, grad_rgb):
    """Per-splat screen-space gradients (means, conics, colors, opacities),
    one row per projected splat."""
    s = state.settings
    proj = state.proj
    n = len(proj)
    pair_grads = kernels.raster_backward(
        state.width, state.height, s.tile_size, state.tiles_x, state.tile_start, state.pairs,
        np.ascontiguousarray(proj.means2d, dtype=np.float64).reshape(n, 2),
        np.ascontiguousarray(proj.conics, dtype=np.float64).reshape(n, 3),
        np.ascontiguousarray(proj.colors, dtype=np.float64).reshape(n, 3),
        np.ascontiguousarray(proj.opacities, dtype=np.float64).reshape(n),
        state.background, state.trans, state.last,
        np.ascontiguousarray(grad_rgb, dtype=np.float64), s.alpha_min, s.alpha_max)
    # bincount sums in pair order, which is fixed, so the reduction is deterministic
    per_splat = np.empty((n, kernels.PAIR_GRAD_WIDTH))
    for c in range(kernels.PAIR_GRAD_WIDTH):
        per_splat[:, c] = np.bincount(state.pairs, weights=pair_grads[:, c], minlength=n)
    return (per_splat[:, 0:2], per_splat[:, 2:5], per_splat[:, 5:8], per_splat[:, 8])


def visible_indices(scene, camera, settings):
    margin = settings.cull_margin if settings.alpha_min > 0.0 else None
    return frustum_cull(scene, camera, settings.near, margin)


def render(scene, camera, background=(0.0, 0.0, 0.0), settings=None, sh_degree=None,
           return_state=False):
    """Cull, project and rasterize ``scene`` as seen by ``camera``."""
    settings = settings or RenderSettings()
    idx = visible_indices(scene, camera, settings)
    proj, cache = project(scene, camera, idx, sh_degree, settings.near)
    out, state = rasterize_projected(proj, camera.width, camera.height, background, settings)
    if return_state:
        state.proj_cache = cache
        return out, state
    return out


def render_reference(scene, camera, background=(0.0, 0.0, 0.0), sh_degree=None, near=0.01,
                     alpha_max=0.99, limit=ORACLE_LIMIT, chunk=512):
    """Exhaustive per-pixel compositing of every splat in front of ``near``.

    No tiles, no skipping, no early termination; only the opacity clamp.
    """
    if len(scene) > limit:
        raise OracleLimitError(f"reference renderer refuses {len(scene)} splats (limit {limit})")
    w, h = camera.width, camera.height
    _check_dims(w, h, 1)
    bg = _background(background)
    idx = frustum_cull(scene, camera, near, margin=None)
    proj, _ = project(scene, camera, idx, sh_degree, near)
    order = depth_order(proj.depths)
    means = proj.means2d[order]
    conics = proj.conics[order]
    colors = proj.colors[order]
    opac = proj.opacities[order]
    depths = proj.depths[order]

    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    px = jj.reshape(-1)
    py = ii.reshape(-1)
    n_pix = px.size
    splat_color = np.zeros((n_pix, 3))
    depth = np.zeros(n_pix)
    trans = np.ones(n_pix)
    for a in range(0, n_pix, chunk):
        b = min(a + chunk, n_pix)
        dx = px[a:b, None] - means[None, :, 0]
        dy = py[a:b, None] - means[None, :, 1]
        power = -0.5 * (conics[None, :, 0] * dx * dx + conics[None, :, 2] * dy * dy) \
            - conics[None, :, 1] * dx * dy
        alpha = np.minimum(opac[None, :] * np.exp(power), alpha_max)
        one_minus = 1.0 - alpha
        t_before = np.cumprod(np.concatenate([np.ones((b - a, 1)), one_minus[:, :-1]], axis=1),
                              axis=1)
        weight = alpha * t_before
        splat_color[a:b] = weight @ colors
        depth[a:b] = weight @ depths
        trans[a:b] = np.prod(one_minus, axis=1)
    splat_color = splat_color.reshape(h, w, 3)
    alpha_acc = 1.0 - trans.reshape(h, w)
    rgb = splat_color + (1.0 - alpha_acc)[..., None] * bg
    return RenderOutput(rgb=rgb, alpha_acc=alpha_acc, splat_color=splat_color,
                        depth=depth.reshape(h, w), background=bg)
