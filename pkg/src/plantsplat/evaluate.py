"""Held-out view evaluation and mask-based cloud cleanup."""

import os
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, MissingMaskError
from .metrics import lpips_from_features, psnr, read_feature_stack, ssim
from .render.raster import render

EVAL_COLUMNS = ("view_id", "psnr", "ssim", "lpips")


@dataclass
class EvalRow:
    view_id: str
    psnr: float
    ssim: float
    lpips: float = None


def eval_images(scene, view, mask_prediction=True, settings=None):
    """Render ``view`` on black and return (prediction, target) for scoring.

    The target is the ground truth times its mask. With ``mask_prediction``
    the render is multiplied by the same mask, so spill outside the
    silhouette (which the masked loss never sees) is not scored.
    """
    if view.frame.alpha is None:
        raise MissingMaskError(f"view {view.name!r} has no mask for evaluation")
    out = render(scene, view.camera, (0.0, 0.0, 0.0), settings)
    m = view.frame.alpha[..., None]
    target = view.frame.rgb * m
    pred = out.rgb * m if mask_prediction else out.rgb
    return pred, target


def evaluate_views(scene, views, mask_prediction=True, features_dir=None, settings=None):
    """One EvalRow per view.

    With ``features_dir``, LPIPS is read from precomputed stacks named
    ``<view>.pred.fst`` and ``<view>.gt.fst``.
    """
    if not views:
        raise DatasetError("no test views to evaluate")
    rows = []
    for view in views:
        pred, target = eval_images(scene, view, mask_prediction, settings)
        lp = None
        if features_dir is not None:
            base = os.path.join(features_dir, _stem(view.name))
            lp = lpips_from_features(read_feature_stack(base + ".pred.fst"),
                                     read_feature_stack(base + ".gt.fst"))
        rows.append(EvalRow(view.name, psnr(pred, target), ssim(pred, target), lp))
    return rows


def _stem(name):
    return os.path.splitext(os.path.basename(name))[0]


def _fmt(v):
    return "" if v is None else repr(float(v))


def format_eval_report(rows, header=None):
    """Tab-separated table with a mean row; ``header`` lines become
    ``#`` comments."""
    lines = [f"# {h}" for h in (header or [])]
    lines.append("\t".join(EVAL_COLUMNS))
    for r in rows:
        lines.append("\t".join([r.view_id, _fmt(r.psnr), _fmt(r.ssim), _fmt(r.lpips)]))
    summary = summarize(rows)
    lines.append("\t".join(["mean", _fmt(summary["psnr"]), _fmt(summary["ssim"]),
                            _fmt(summary["lpips"])]))
    return "\n".join(lines) + "\n"


def summarize(rows):
    lp = [r.lpips for r in rows if r.lpips is not None]
    return {
        "psnr": float(np.mean([r.psnr for r in rows])),
        "ssim": float(np.mean([r.ssim for r in rows])),
        "lpips": float(np.mean(lp)) if lp else None,
    }


def parse_eval_report(text):
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("#") or line.startswith("view_id"):
            continue
        vid, p, s, l = (line.split("\t") + [""] * 4)[:4]
        if vid == "mean":
            continue
        rows.append(EvalRow(vid, float(p), float(s), float(l) if l else None))
    return rows


def mask_votes(points, views):
    """Per point: (views where it projects inside the image, of those how
    many land on a foreground mask pixel)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    seen = np.zeros(len(points), dtype=np.int64)
    inside = np.zeros(len(points), dtype=np.int64)
    for view in views:
        if view.frame.alpha is None:
            raise MissingMaskError(f"view {view.name!r} has no mask")
        cam = view.camera
        pc = cam.world_to_camera(points)
        z = pc[:, 2]
        front = z > 1e-6
        zs = np.where(front, z, 1.0)
        u = cam.fx * pc[:, 0] / zs + cam.cx
        v = cam.fy * pc[:, 1] / zs + cam.cy
        ok = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        j = np.clip(np.floor(u).astype(np.int64), 0, cam.width - 1)
        i = np.clip(np.floor(v).astype(np.int64), 0, cam.height - 1)
        fg = view.frame.alpha[i, j] > 0.5
        seen += ok
        inside += ok & fg
    return seen, inside


def mask_keep(points, views):
    """Majority vote: keep a point when it lands on foreground in more than
    half of the views that see it. Points no view sees are dropped."""
    seen, inside = mask_votes(points, views)
    return (seen > 0) & (2 * inside > seen)


__all__ = [
    "EVAL_COLUMNS", "EvalRow", "eval_images", "evaluate_views", "format_eval_report",
    "mask_keep", "mask_votes", "parse_eval_report", "summarize",
]
