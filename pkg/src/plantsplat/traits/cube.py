"""Calibration cube: identification among clusters and edge estimation from
opposite face planes."""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import EstimationError, InvalidParameterError, SegmentationError

log = logging.getLogger(__name__)


@dataclass
class OrientedBox:
    center: np.ndarray
    axes: np.ndarray  # rows are unit axes, largest variance first
    extents: np.ndarray

    @property
    def volume(self):
        return float(np.prod(self.extents))

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.extents))


def oriented_box(points):
    """PCA-aligned bounding box."""
    points = np.asarray(points, dtype=np.float64)
    center = points.mean(axis=0)
    cov = np.cov((points - center).T) if len(points) > 1 else np.zeros((3, 3))
    vals, vecs = np.linalg.eigh(cov)
    axes = vecs[:, ::-1].T
    proj = (points - center) @ axes.T
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    box_center = center + ((lo + hi) / 2.0) @ axes
    return OrientedBox(box_center, axes, hi - lo)


@dataclass
class CubeChoice:
    cluster_id: int
    score: float
    scores: dict
    boxes: dict
    duplicate: bool = False


def identify_cube(labeled, min_points=1):
    """Pick the most cube-like cluster.

    score = (shortest / longest OBB extent) * fill, where fill is the
    cluster's points per OBB volume divided by the largest such density over
    the candidates. Ties go to the lower cluster id.
    """
    ids = [c for c in range(labeled.n_clusters)
           if np.count_nonzero(labeled.labels == c) >= min_points]
    if len(ids) < 2:
        raise SegmentationError(f"need at least 2 clusters to find the cube, found {len(ids)}")
    boxes = {c: oriented_box(labeled.cluster(c)) for c in ids}
    density = {}
    for c in ids:
        vol = boxes[c].volume
        n = np.count_nonzero(labeled.labels == c)
        density[c] = n / vol if vol > 0 else 0.0
    top = max(density.values())
    scores = {}
    for c in ids:
        ext = boxes[c].extents
        ratio = ext.min() / ext.max() if ext.max() > 0 else 0.0
        scores[c] = ratio * (density[c] / top if top > 0 else 0.0)
    best = max(ids, key=lambda c: (scores[c], -c))
    ranked = sorted(scores.values(), reverse=True)
    duplicate = len(ranked) > 1 and np.isclose(ranked[0], ranked[1], rtol=1e-9, atol=0.0)
    if duplicate:
        log.warning("two clusters score equally as the calibration cube; using id %d", best)
    return CubeChoice(best, scores[best], scores, boxes, duplicate)


@dataclass
class Plane:
    normal: np.ndarray  # unit, pointing away from the cluster centroid
    offset: float  # normal . x = offset
    centroid: np.ndarray
    n_inliers: int


@dataclass
class CubeEdge:
    edge: float
    pair_distances: list
    planes: list = field(default_factory=list)
    degraded: bool = False
    reason: str = ""
    threshold: float = 0.0


def _fit_plane(points):
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    return n, float(n @ c), c


def _refine_plane(points, normal, offset, thr):
    """Least squares on inliers, then shrink the band to a robust residual
    spread so points from neighbouring faces drop out."""
    band = thr
    sel = np.abs(points @ normal - offset) <= band
    for _ in range(5):
        if np.count_nonzero(sel) < 3:
            break
        normal, offset, _ = _fit_plane(points[sel])
        res = np.abs(points @ normal - offset)
        mad = np.median(res[sel])
        band = min(thr, 3.0 * 1.4826 * mad + thr * 1e-9)
        new = res <= band
        if np.array_equal(new, sel):
            break
        sel = new
    normal, offset, centroid = _fit_plane(points[sel])
    return normal, offset, centroid, sel


def ransac_plane(points, thr, iterations, rng):
    """Best plane by inlier count over ``iterations`` random triples."""
    n = len(points)
    tri = np.stack([rng.choice(n, 3, replace=False) for _ in range(iterations)])
    p0, p1, p2 = points[tri[:, 0]], points[tri[:, 1]], points[tri[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 0
    best, best_count = None, -1
    chunk = max(1, 4_000_000 // max(n, 1))
    for a in range(0, iterations, chunk):
        sl = slice(a, min(a + chunk, iterations))
        nn = np.where(ok[sl, None], normals[sl] / np.where(norms[sl] > 0, norms[sl], 1.0)[:, None],
                      0.0)
        off = np.einsum("ij,ij->i", nn, p0[sl])
        counts = np.count_nonzero(np.abs(points @ nn.T - off) <= thr, axis=0)
        counts[~ok[sl]] = -1
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count = int(counts[k])
            best = (nn[k], float(off[k]))
    return best, best_count


def estimate_cube_edge(points, ransac_iterations=1000, threshold_fraction=0.005,
                       antiparallel_deg=10.0, max_planes=6, min_points=600, seed=0):
    """Edge length from the mean distance between opposite face planes.

    Planes are found by RANSAC with fit-and-remove. Opposite faces are
    matched when their outward normals are antiparallel within
    ``antiparallel_deg``. Fewer than three pairs falls back to the median
    OBB extent and marks the estimate degraded.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 4:
        raise EstimationError(f"cube cluster has only {len(points)} points")
    box = oriented_box(points)
    if box.extents[2] <= 1e-6 * box.extents[0]:
        raise EstimationError("cube cluster is flat; no opposite faces to measure")
    thr = threshold_fraction * box.diagonal
    if len(points) < min_points:
        log.warning("cube cluster has %d points (< %d), using box extents",
                    len(points), min_points)
        return CubeEdge(float(np.median(box.extents)), [], [], True,
                        f"only {len(points)} points", thr)
    rng = np.random.default_rng(seed)
    centroid = points.mean(axis=0)
    remaining = points
    planes = []
    min_inliers = max(3, len(points) // 50)
    for _ in range(max_planes):
        if len(remaining) < max(3, min_inliers):
            break
        best, count = ransac_plane(remaining, thr, ransac_iterations, rng)
        if best is None or count < min_inliers:
            break
        normal, offset, pc, _ = _refine_plane(remaining, best[0], best[1], thr)
        if (pc - centroid) @ normal < 0:
            normal, offset = -normal, -offset
        inl = np.abs(remaining @ normal - offset) <= thr
        planes.append(Plane(normal, offset, pc, int(np.count_nonzero(inl))))
        remaining = remaining[~inl]

    cos_tol = np.cos(np.deg2rad(antiparallel_deg))
    cand = []
    for a in range(len(planes)):
        for b in range(a + 1, len(planes)):
            c = -float(planes[a].normal @ planes[b].normal)
            if c >= cos_tol:
                cand.append((-c, a, b))
    used, pairs = set(), []
    for _, a, b in sorted(cand):
        if a in used or b in used:
            continue
        used.update((a, b))
        pa, pb = planes[a], planes[b]
        avg = pa.normal - pb.normal
        avg /= np.linalg.norm(avg)
        pairs.append(abs(float((pa.centroid - pb.centroid) @ avg)))
    if len(pairs) >= 3:
        dists = pairs[:3]
        return CubeEdge(float(np.mean(dists)), dists, planes, False, "", thr)
    if not pairs:
        raise EstimationError(f"no opposite cube faces among {len(planes)} fitted planes")
    log.warning("found %d opposite face pairs, using box extents", len(pairs))
    return CubeEdge(float(np.median(box.extents)), pairs, planes, True,
                    f"{len(pairs)} face pairs", thr)


def compute_scale(l_cube_measured, true_edge_cm=10.0):
    """Centimeters per reconstruction unit."""
    if not l_cube_measured > 0:
        raise InvalidParameterError(f"cube edge must be positive, got {l_cube_measured}")
    return true_edge_cm / l_cube_measured
