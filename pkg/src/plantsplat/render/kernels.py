"""Compiled tile kernels: binning, forward compositing and its adjoint.

Every kernel parallelizes over tiles. Tiles own disjoint pixel blocks and
disjoint slices of the pair list, so results do not depend on thread count.
"""

import math

import numba
import numpy as np
from numba import njit, prange

# skip the TBB layer: it warns on older system TBB builds
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# Per-pair gradient layout produced by ``raster_backward``.
G_MX, G_MY, G_CA, G_CB, G_CC, G_R, G_G, G_B, G_OPAC = range(9)
PAIR_GRAD_WIDTH = 9


@njit(cache=True)
def bin_splats(order, tile_lo, tile_hi, tiles_x, n_tiles):
    """Counting sort of (tile, splat) pairs.

    ``order`` lists splat rows front to back; ``tile_lo``/``tile_hi`` hold the
    inclusive (tx, ty) tile rectangle of each row (lo > hi means no tiles).
    Returns (tile_start, tile_end, pair_rows) with each tile's rows in depth
    order.
    """
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for k in range(order.shape[0]):
        s = order[k]
        for ty in range(tile_lo[s, 1], tile_hi[s, 1] + 1):
            for tx in range(tile_lo[s, 0], tile_hi[s, 0] + 1):
                counts[ty * tiles_x + tx + 1] += 1
    for t in range(n_tiles):
        counts[t + 1] += counts[t]
    tile_start = counts[:n_tiles].copy()
    tile_end = counts[1:].copy()
    fill = counts[:n_tiles].copy()
    pairs = np.empty(counts[n_tiles], dtype=np.int64)
    for k in range(order.shape[0]):
        s = order[k]
        for ty in range(tile_lo[s, 1], tile_hi[s, 1] + 1):
            for tx in range(tile_lo[s, 0], tile_hi[s, 0] + 1):
                t = ty * tiles_x + tx
                pairs[fill[t]] = s
                fill[t] += 1
    return tile_start, tile_end, pairs


@njit(cache=True, parallel=True)
def raster_forward(width, height, tile_size, tiles_x, tile_start, tile_end, pairs,
                   means, conics, colors, opac, depths, alpha_min, alpha_max, t_min):
    n_tiles = tile_start.shape[0]
    splat_color = np.zeros((height, width, 3))
    depth_acc = np.zeros((height, width))
    trans = np.ones((height, width))
    last = np.zeros((height, width), dtype=np.int64)
    for tile in prange(n_tiles):
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        start = tile_start[tile]
        end = tile_end[tile]
        for i in range(ty * tile_size, min((ty + 1) * tile_size, height)):
            py = i + 0.5
            for j in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                px = j + 0.5
                t = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                d = 0.0
                stop = start
                for k in range(start, end):
                    s = pairs[k]
                    dx = px - means[s, 0]
                    dy = py - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) \
                        - conics[s, 1] * dx * dy
                    alpha = opac[s] * math.exp(power)
                    if alpha > alpha_max:
                        alpha = alpha_max
                    if alpha < alpha_min:
                        continue
                    next_t = t * (1.0 - alpha)
                    if next_t < t_min:
                        break
                    w = alpha * t
                    r += colors[s, 0] * w
                    g += colors[s, 1] * w
                    b += colors[s, 2] * w
                    d += depths[s] * w
                    t = next_t
                    stop = k + 1
                splat_color[i, j, 0] = r
                splat_color[i, j, 1] = g
                splat_color[i, j, 2] = b
                depth_acc[i, j] = d
                trans[i, j] = t
                last[i, j] = stop
    return splat_color, depth_acc, trans, last


@njit(cache=True, parallel=True)
def raster_backward(width, height, tile_size, tiles_x, tile_start, pairs,
                    means, conics, colors, opac, background, trans, last,
                    grad_rgb, alpha_min, alpha_max):
    """Per-pair gradients of the loss given dL/d(rgb) per pixel.

    Walks each pixel's composited list back to front, recovering the
    transmittance in front of every splat by division.
    """
    n_tiles = tile_start.shape[0]
    out = np.zeros((pairs.shape[0], 9))
    for tile in prange(n_tiles):
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        start = tile_start[tile]
        for i in range(ty * tile_size, min((ty + 1) * tile_size, height)):
            py = i + 0.5
            for j in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                px = j + 0.5
                gr = grad_rgb[i, j, 0]
                gg = grad_rgb[i, j, 1]
                gb = grad_rgb[i, j, 2]
                t_final = trans[i, j]
                bg_dot = background[0] * gr + background[1] * gg + background[2] * gb
                t = t_final
                acc_r = 0.0
                acc_g = 0.0
                acc_b = 0.0
                last_alpha = 0.0
                last_r = 0.0
                last_g = 0.0
                last_b = 0.0
                for k in range(last[i, j] - 1, start - 1, -1):
                    s = pairs[k]
                    dx = px - means[s, 0]
                    dy = py - means[s, 1]
                    power = -0.5 * (conics[s, 0] * dx * dx + conics[s, 2] * dy * dy) \
                        - conics[s, 1] * dx * dy
                    gauss = math.exp(power)
                    raw = opac[s] * gauss
                    alpha = raw
                    if alpha > alpha_max:
                        alpha = alpha_max
                    if alpha < alpha_min:
                        continue
                    t = t / (1.0 - alpha)
                    w = alpha * t
                    out[k, G_R] += w * gr
                    out[k, G_G] += w * gg
                    out[k, G_B] += w * gb
                    # color of everything behind this splat, excluding background
                    acc_r = last_alpha * last_r + (1.0 - last_alpha) * acc_r
                    acc_g = last_alpha * last_g + (1.0 - last_alpha) * acc_g
                    acc_b = last_alpha * last_b + (1.0 - last_alpha) * acc_b
                    cr = colors[s, 0]
                    cg = colors[s, 1]
                    cb = colors[s, 2]
                    last_alpha = alpha
                    last_r = cr
                    last_g = cg
                    last_b = cb
                    if raw > alpha_max:
                        continue
                    g_alpha = t * ((cr - acc_r) * gr + (cg - acc_g) * gg + (cb - acc_b) * gb)
                    g_alpha -= t_final / (1.0 - alpha) * bg_dot
                    out[k, G_OPAC] += gauss * g_alpha
                    g_power = raw * g_alpha
                    out[k, G_MX] += g_power * (conics[s, 0] * dx + conics[s, 1] * dy)
                    out[k, G_MY] += g_power * (conics[s, 1] * dx + conics[s, 2] * dy)
                    out[k, G_CA] += -0.5 * g_power * dx * dx
                    out[k, G_CB] += -g_power * dx * dy
                    out[k, G_CC] += -0.5 * g_power * dy * dy
    return out
