"""Training loop: masked/unmasked photometric optimization with density
control and per-iteration background randomization."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .. import sh as shlib
from ..errors import DatasetError
from ..render.raster import RenderSettings
from ..scene import GaussianScene, logit
from .adam import Adam
from .backward import GradientBuffer, backward
from .density import densify_and_prune, reset_opacity

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "loss", "l1", "dssim", "splats", "pruned", "cloned", "split",
               "wall_time")


@dataclass
class StepStats:
    iteration: int
    loss: float
    l1: float
    dssim: float
    splats: int
    background: np.ndarray
    skipped_views: int = 0
    pruned: int = 0
    cloned: int = 0
    split: int = 0
    wall_time: float = 0.0

    def row(self):
        return (self.iteration, self.loss, self.l1, self.dssim, self.splats, self.pruned,
                self.cloned, self.split, self.wall_time)


def init_scene_from_points(points, colors, sh_degree=3, init_opacity=0.1, dtype=np.float32):
    """Seed one splat per point; isotropic scale from the mean distance to the
    three nearest neighbours."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if n == 0:
        return GaussianScene.empty(sh_degree, dtype)
    if n > 1:
        k = min(4, n)
        dist, _ = cKDTree(points).query(points, k=k)
        mean_d = dist[:, 1:].mean(axis=1)
    else:
        mean_d = np.ones(1)
    mean_d = np.maximum(mean_d, 1e-7)
    colors = np.asarray(colors, dtype=np.float64).reshape(n, 3)
    k = shlib.num_coeffs(sh_degree)
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = shlib.rgb_to_dc(colors)
    return GaussianScene(
        positions=points.astype(dtype),
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0], dtype), (n, 1)),
        log_scales=np.repeat(np.log(mean_d)[:, None], 3, axis=1).astype(dtype),
        opacity_logits=np.full(n, logit(init_opacity), dtype=dtype),
        sh=sh.astype(dtype),
        sh_degree=sh_degree,
    )


def random_init(dataset, count, rng, sh_degree=3, init_opacity=0.1):
    """Uniform seeding inside the box spanned by the camera centers."""
    centers = dataset.camera_centers()
    lo, hi = centers.min(axis=0), centers.max(axis=0)
    pts = rng.uniform(lo, hi, size=(count, 3))
    cols = rng.uniform(size=(count, 3))
    return init_scene_from_points(pts, cols, sh_degree, init_opacity)


class Trainer:
    """Owns the scene, optimizer state and refinement schedule."""

    def __init__(self, scene, config, extent=1.0, rng=None):
        self.scene = scene
        self.config = config
        self.extent = float(extent)
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.iteration = 0
        self.settings = RenderSettings(tile_size=config.tile_size)
        self.optimizer = Adam(scene, self._lrs(0), (config.adam_beta1, config.adam_beta2),
                              config.adam_eps)
        self._view_queue = []

    def _lrs(self, iteration):
        c = self.config
        k = shlib.num_coeffs(self.scene.sh_degree)
        sh_lr = np.full((1, k, 1), c.sh_rest_lr)
        sh_lr[0, 0, 0] = c.sh_dc_lr
        return {
            "positions": self._position_lr(iteration),
            "rotations": c.rotation_lr,
            "log_scales": c.scaling_lr,
            "opacity_logits": c.opacity_lr,
            "sh": sh_lr,
        }

    def _position_lr(self, iteration):
        c = self.config
        lr0 = c.position_lr_init * self.extent
        lr1 = c.position_lr_final * self.extent
        t = np.clip(iteration / max(c.iterations, 1), 0.0, 1.0)
        if lr0 <= 0.0 or lr1 <= 0.0:
            # log interpolation is undefined, fall back to linear
            return float((1.0 - t) * lr0 + t * lr1)
        return float(np.exp((1.0 - t) * np.log(lr0) + t * np.log(lr1)))

    def active_sh_degree(self, iteration=None):
        it = self.iteration if iteration is None else iteration
        return min(self.scene.sh_degree, self.config.sh_degree,
                   it // self.config.sh_increase_every)

    def next_views(self, views, batch=1):
        """Shuffled passes over the training views."""
        out = []
        for _ in range(batch):
            if not self._view_queue:
                self._view_queue = list(self.rng.permutation(len(views)))
            out.append(views[self._view_queue.pop()])
        return out

    def train_step(self, views):
        """One optimizer step over a batch of views (gradients averaged)."""
        c = self.config
        self.iteration += 1
        it = self.iteration
        t0 = time.perf_counter()
        if c.use_random_background:
            bg = self.rng.uniform(size=3)
        else:
            bg = np.array(c.background, dtype=np.float64)
        degree = self.active_sh_degree(it - 1)
        total = GradientBuffer.zeros(self.scene)
        loss = l1 = dssim = 0.0
        used = skipped = 0
        for view in views:
            mask = view.frame.alpha if c.masked else None
            res = backward(self.scene, view.camera, view.frame.rgb, mask, c.lam, bg,
                           self.settings, degree, iteration=it)
            if res.empty_mask:
                log.warning("iteration %d: view %r has an empty mask, skipped", it, view.name)
                skipped += 1
                continue
            used += 1
            loss += res.loss
            l1 += res.l1
            dssim += res.dssim
            for name, g in res.grads.as_dict().items():
                getattr(total, name)[...] += g
            total.mean2d_norm += res.grads.mean2d_norm
            total.visible |= res.grads.visible
            if it <= c.refine_stop_iter:
                self.scene.grad_accum += res.grads.mean2d_norm
                self.scene.obs_count += res.grads.visible
                np.maximum(self.scene.max_screen, res.grads.screen_radius,
                           out=self.scene.max_screen)
        if used:
            scale = 1.0 / used
            grads = {k: v * scale for k, v in total.as_dict().items()}
            self.optimizer.lrs = self._lrs(it)
            self.optimizer.step(self.scene, grads)
            loss, l1, dssim = loss * scale, l1 * scale, dssim * scale
        stats = StepStats(it, loss, l1, dssim, len(self.scene), bg, skipped_views=skipped)
        self._maybe_refine(stats)
        stats.wall_time = time.perf_counter() - t0
        return stats

    def _maybe_refine(self, stats):
        c = self.config
        it = self.iteration
        if c.warmup_iters < it <= c.refine_stop_iter and it % c.refine_every == 0:
            self.refine(stats)
        if c.opacity_reset_every and it <= c.refine_stop_iter and it % c.opacity_reset_every == 0:
            rows = reset_opacity(self.scene, 2.0 * c.prune_opacity_threshold)
            self.optimizer.reset("opacity_logits", rows)

    def refine(self, stats=None):
        new_scene, report, source = densify_and_prune(self.scene, self.config, self.extent,
                                                      self.rng)
        self.optimizer.remap(source)
        self.scene = new_scene
        if stats is not None:
            stats.pruned, stats.cloned, stats.split = report.pruned, report.cloned, report.split
            stats.splats = len(self.scene)
        return report

    def state_dict(self):
        out = {f"optim.{k}": v for k, v in self.optimizer.state_dict().items()}
        out["iteration"] = np.array(self.iteration)
        out["grad_accum"] = self.scene.grad_accum
        out["obs_count"] = self.scene.obs_count
        out["max_screen"] = self.scene.max_screen
        return out

    def load_state_dict(self, state):
        self.iteration = int(state["iteration"])
        self.optimizer.load_state_dict(
            {k[len("optim."):]: v for k, v in state.items() if k.startswith("optim.")})
        self.scene.grad_accum = np.array(state["grad_accum"], dtype=np.float64)
        self.scene.obs_count = np.array(state["obs_count"], dtype=np.int64)
        self.scene.max_screen = np.array(state["max_screen"], dtype=np.float64)


@dataclass
class FitResult:
    scene: GaussianScene
    log: list = field(default_factory=list)
    trainer: Trainer = None
    wall_time: float = 0.0


def initial_scene(dataset, config, rng):
    if dataset.points is not None and len(dataset.points):
        colors = dataset.point_colors
        if colors is None:
            colors = np.full((len(dataset.points), 3), 0.5)
        return init_scene_from_points(dataset.points, colors, config.sh_degree,
                                      config.init_opacity)
    log.warning("no sparse points available, seeding randomly")
    return random_init(dataset, 2000, rng, config.sh_degree, config.init_opacity)


def fit(dataset, config, trainer=None, on_checkpoint=None, on_eval=None, eval_every=0,
        log_file=None, batch=1):
    """Train a scene on ``dataset.train`` for ``config.iterations`` steps.

    ``trainer`` resumes an existing run. ``on_checkpoint(trainer)`` fires every
    ``config.checkpoint_every`` iterations and ``on_eval(trainer)`` every
    ``eval_every``; ``log_file`` receives one tab-separated record per logged
    iteration.
    """
    if dataset is None or len(dataset.train) == 0:
        raise DatasetError("dataset has no training views")
    dataset.check(need_masks=config.masked)
    if len(dataset.train) < 2:
        raise DatasetError("at least two training views are required")
    if trainer is None:
        rng = np.random.default_rng(config.seed)
        scene = initial_scene(dataset, config, rng)
        trainer = Trainer(scene, config, dataset.scene_extent(), rng)
    records = []
    start = time.perf_counter()
    if log_file is not None and trainer.iteration == 0:
        log_file.write("\t".join(LOG_COLUMNS) + "\n")
    while trainer.iteration < config.iterations:
        stats = trainer.train_step(trainer.next_views(dataset.train, batch))
        stats.wall_time = time.perf_counter() - start
        records.append(stats)
        it = stats.iteration
        if log_file is not None and (it % config.log_every == 0 or stats.pruned
                                     or stats.cloned or stats.split):
            log_file.write(format_log_row(stats) + "\n")
        if on_checkpoint and config.checkpoint_every and it % config.checkpoint_every == 0:
            on_checkpoint(trainer)
        if on_eval and eval_every and it % eval_every == 0:
            on_eval(trainer)
    return FitResult(trainer.scene, records, trainer, time.perf_counter() - start)


def format_log_row(stats):
    return (f"{stats.iteration}\t{stats.loss:.6f}\t{stats.l1:.6f}\t{stats.dssim:.6f}\t"
            f"{stats.splats}\t{stats.pruned}\t{stats.cloned}\t{stats.split}\t"
            f"{stats.wall_time:.3f}")
