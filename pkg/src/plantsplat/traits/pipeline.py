"""End-to-end trait extraction: cloud -> clusters -> cube -> scale -> traits."""

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import (ConfigError, EmptyCloudError, PipelineStageError, SegmentationError,
                      SplatError)
from ..scene import GaussianScene
from .cluster import LabeledCloud, dbscan, default_eps, extract_points
from .cube import compute_scale, estimate_cube_edge, identify_cube
from .geometry import crown_width, plant_height
from .report import TraitReport

log = logging.getLogger(__name__)


@dataclass
class TraitConfig:
    opacity_min: float = 0.5
    eps: float = None  # None: twice the median 8-NN distance
    min_pts: int = 10
    min_cluster_points: int = 30  # smaller clusters cannot be cube or plant
    true_edge_cm: float = 10.0
    ransac_iterations: int = 1000
    ransac_threshold_fraction: float = 0.005
    antiparallel_deg: float = 10.0
    cube_min_points: int = 600
    up_axis: tuple = (0.0, 0.0, 1.0)
    # "fixed" uses up_axis; "cube" takes the cube face normal closest to the
    # minor axis of the camera positions
    up_mode: str = "fixed"
    robust_height: bool = False
    height_percentiles: tuple = (0.5, 99.5)
    seed: int = 0

    def __post_init__(self):
        self.up_axis = tuple(float(v) for v in self.up_axis)
        self.height_percentiles = tuple(float(v) for v in self.height_percentiles)
        self.validate()

    def validate(self):
        if self.eps is not None and not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.min_pts < 1:
            raise ConfigError("min_pts must be >= 1")
        if not self.true_edge_cm > 0:
            raise ConfigError("true_edge_cm must be positive")
        if self.up_mode not in ("fixed", "cube"):
            raise ConfigError(f"up_mode must be 'fixed' or 'cube', got {self.up_mode!r}")
        if len(self.up_axis) != 3 or not np.any(self.up_axis):
            raise ConfigError("up_axis must be a nonzero 3-vector")
        if not 0 < self.ransac_threshold_fraction < 1:
            raise ConfigError("ransac_threshold_fraction must lie in (0, 1)")
        if self.ransac_iterations < 1:
            raise ConfigError("ransac_iterations must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["up_axis"] = list(self.up_axis)
        d["height_percentiles"] = list(self.height_percentiles)
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown trait options: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


class _Stage:
    """Re-raise package errors tagged with the failing stage."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None and isinstance(exc, SplatError) \
                and not isinstance(exc, PipelineStageError):
            raise PipelineStageError(self.name, exc) from exc
        return False


def _up_from_cube(edge, camera_centers):
    """Face normal most aligned with the direction of least spread of the
    camera positions (the ring axis)."""
    centers = np.asarray(camera_centers, dtype=np.float64)
    if len(centers) < 3:
        raise SegmentationError("cube up-axis mode needs at least 3 camera positions")
    _, vecs = np.linalg.eigh(np.cov((centers - centers.mean(axis=0)).T))
    minor = vecs[:, 0]
    if not edge.planes:
        raise SegmentationError("no cube planes available for up-axis estimation")
    normals = np.array([p.normal for p in edge.planes])
    k = int(np.argmax(np.abs(normals @ minor)))
    up = normals[k] * np.sign(normals[k] @ minor)
    # orient like the configured default (+z in most captures)
    return up if up[2] >= 0 else -up


def _check_lone_cube(labeled, config):
    """A single eligible cluster with three opposite face pairs is taken to
    be the cube with the plant missing; anything else is left for cube
    identification to reject."""
    ids = [c for c in range(labeled.n_clusters)
           if np.count_nonzero(labeled.labels == c) >= config.min_cluster_points]
    if len(ids) != 1:
        return
    pts = labeled.cluster(ids[0])
    if len(pts) < config.cube_min_points:
        return
    try:
        edge = estimate_cube_edge(pts, config.ransac_iterations,
                                  config.ransac_threshold_fraction, config.antiparallel_deg,
                                  min_points=config.cube_min_points, seed=config.seed)
    except SplatError:
        return
    if not edge.degraded:
        raise SegmentationError("plant cluster missing: the only cluster is the cube")


def extract_traits(source, config=None, plant_id="", camera_centers=None):
    """Measure scale, height and crown widths.

    ``source`` is a GaussianScene (filtered by opacity) or an (N, 3) array.
    Failures are raised as PipelineStageError naming the stage.
    """
    config = config or TraitConfig()
    with _Stage("extract"):
        if isinstance(source, GaussianScene):
            points = extract_points(source, config.opacity_min)
        else:
            points = np.asarray(source, dtype=np.float64).reshape(-1, 3)
            if len(points) == 0:
                raise EmptyCloudError("input cloud is empty")
    with _Stage("cluster"):
        eps = config.eps if config.eps is not None else default_eps(points)
        labeled = dbscan(points, eps, config.min_pts)
    with _Stage("plant"):
        _check_lone_cube(labeled, config)
    with _Stage("identify-cube"):
        choice = identify_cube(labeled, config.min_cluster_points)
    cube_pts = labeled.cluster(choice.cluster_id)
    with _Stage("cube-edge"):
        edge = estimate_cube_edge(cube_pts, config.ransac_iterations,
                                  config.ransac_threshold_fraction, config.antiparallel_deg,
                                  min_points=config.cube_min_points, seed=config.seed)
    with _Stage("scale"):
        scale = compute_scale(edge.edge, config.true_edge_cm)
    with _Stage("plant"):
        sizes = labeled.sizes()
        others = [c for c in choice.scores if c != choice.cluster_id]
        if not others:
            raise SegmentationError("no plant cluster besides the calibration cube")
        plant_id_c = max(others, key=lambda c: (sizes[c], -c))
        plant = labeled.cluster(plant_id_c)
    with _Stage("up-axis"):
        up = np.array(config.up_axis)
        if config.up_mode == "cube":
            if camera_centers is None:
                raise SegmentationError("cube up-axis mode needs camera positions")
            up = _up_from_cube(edge, camera_centers)
    with _Stage("height"):
        height = plant_height(plant, scale, up, config.robust_height,
                              config.height_percentiles)
    with _Stage("width"):
        w1, w2, axes = crown_width(plant, scale, up)

    cube_box = choice.boxes[choice.cluster_id]
    diag = {
        "n_points": int(len(points)),
        "eps": float(eps),
        "min_pts": int(config.min_pts),
        "n_clusters": int(labeled.n_clusters),
        "n_noise": int(np.count_nonzero(labeled.labels < 0)),
        "cluster_sizes": [int(s) for s in sizes],
        "cube_cluster": int(choice.cluster_id),
        "plant_cluster": int(plant_id_c),
        "cube_obb_extents": [float(e) for e in cube_box.extents],
        "cube_scores": [float(choice.scores[c]) for c in sorted(choice.scores)],
        "cube_duplicate_candidate": bool(choice.duplicate),
        "cube_pair_distances": [float(d) for d in edge.pair_distances],
        "cube_planes": len(edge.planes),
        "cube_edge_degraded": bool(edge.degraded),
        "ransac_threshold": float(edge.threshold),
        "ransac_threshold_fraction": float(config.ransac_threshold_fraction),
        "ransac_iterations": int(config.ransac_iterations),
        "antiparallel_deg": float(config.antiparallel_deg),
        "up_axis": [float(u) for u in up / np.linalg.norm(up)],
        "crown_axis1": [float(a) for a in axes[0]],
        "crown_axis2": [float(a) for a in axes[1]],
    }
    return TraitReport(scale_factor=scale, cube_edge_measured=edge.edge, height_cm=height,
                       width1_cm=w1, width2_cm=w2, plant_id=plant_id, cube_score=choice.score,
                       diagnostics=diag)


__all__ = ["LabeledCloud", "TraitConfig", "extract_traits"]
