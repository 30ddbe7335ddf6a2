"""Gradient-driven cloning/splitting and opacity pruning."""

from dataclasses import dataclass

import numpy as np

from ..scene import GaussianScene, logit, quat_to_rotmat


@dataclass
class RefinementReport:
    before: int
    after: int
    pruned: int = 0
    cloned: int = 0
    split: int = 0
    oversized: int = 0  # subset of ``pruned`` removed for size rather than opacity


def densify_and_prune(scene, config, extent=1.0, rng=None):
    """One refinement event.

    Returns (new_scene, report, source) where ``source[i]`` is the row of
    ``scene`` that new row ``i`` descends from as a kept original, or -1 for
    rows created by cloning or splitting.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(scene)
    obs = scene.obs_count
    avg = np.divide(scene.grad_accum, obs, out=np.zeros(n), where=obs > 0)
    thresh = config.split_scale_threshold
    if thresh is None:
        thresh = config.percent_dense * extent
    max_scale = np.max(scene.scales, axis=1) if n else np.zeros(0)
    hot = avg >= config.grad_densify_threshold
    if config.max_splats is not None:
        room = max(config.max_splats - n, 0)
        if np.count_nonzero(hot) > room:
            # keep the strongest candidates; ties resolved by index
            order = np.lexsort((np.arange(n), -avg))
            keep = np.zeros(n, dtype=bool)
            keep[order[:room]] = True
            hot &= keep
    clone = hot & (max_scale <= thresh)
    split = hot & (max_scale > thresh)

    parts = [scene.subset(~split)]
    source = [np.nonzero(~split)[0]]
    if np.any(clone):
        parts.append(scene.subset(clone))
        source.append(np.full(np.count_nonzero(clone), -1))
    if np.any(split):
        parent = scene.subset(split)
        children = []
        rot = quat_to_rotmat(parent.rotations)
        stds = parent.scales
        for _ in range(2):
            child = parent.copy()
            offset = rng.normal(size=stds.shape) * stds
            pos = parent.positions.astype(np.float64) + np.einsum("nij,nj->ni", rot, offset)
            child.positions = pos.astype(scene.dtype)
            child.log_scales = (parent.log_scales.astype(np.float64)
                                - np.log(config.split_factor)).astype(scene.dtype)
            children.append(child)
        parts.extend(children)
        source.append(np.full(2 * len(parent), -1))
    merged = GaussianScene.concat(parts)
    source = np.concatenate(source)

    alive = merged.opacities >= config.prune_opacity_threshold
    oversized = np.zeros(len(merged), dtype=bool)
    if config.cull_scale_fraction is not None:
        oversized |= np.max(merged.scales, axis=1) > config.cull_scale_fraction * extent
    if config.cull_screen_fraction is not None:
        oversized |= merged.max_screen > config.cull_screen_fraction
    oversized &= alive
    alive &= ~oversized
    merged = merged.subset(alive)
    source = source[alive]
    merged.reset_counters()
    report = RefinementReport(
        before=n,
        after=len(merged),
        pruned=int(np.count_nonzero(~alive)),
        cloned=int(np.count_nonzero(clone)),
        split=int(np.count_nonzero(split)),
        oversized=int(np.count_nonzero(oversized)),
    )
    return merged, report, source


def reset_opacity(scene, ceiling):
    """Clamp every opacity to at most ``ceiling``; returns affected rows."""
    cap = logit(ceiling)
    rows = scene.opacity_logits > cap
    scene.opacity_logits[rows] = np.asarray(cap, dtype=scene.dtype)
    return rows
