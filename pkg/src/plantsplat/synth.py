"""Synthetic calibration-cube + plant scenes with exactly known traits.

World units are meters and z is up. The plant surrogate is an ellipsoidal
canopy shell on a vertical stem; its bounding dimensions equal the requested
traits exactly. Ground-truth frames come from the brute-force renderer.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import sh as shlib
from .errors import ConfigError
from .io.colmap import write_colmap_text
from .io.frames import Dataset, RgbaFrame, View
from .io.images import save_rgba
from .io.manifest import FrameRecord, Manifest, split_dataset
from .io.ply import export_ply
from .render.raster import render_reference
from .scene import CameraView, GaussianScene, rotmat_to_quat
from .traits.report import TraitReport

log = logging.getLogger(__name__)

CUBE, PLANT, CLUTTER = 0, 1, 2


@dataclass
class SynthSpec:
    cube_edge_cm: float = 10.0
    height_cm: float = 22.0
    width1_cm: float = 30.0
    width2_cm: float = 24.0
    canopy_fraction: float = 0.6  # share of the height taken by the canopy
    stem_radius_cm: float = 0.8
    surface_density: float = 20000.0  # splats per square meter
    splat_sigma_factor: float = 0.6  # splat std relative to sample spacing
    opacity: float = 0.95
    ring_radii: tuple = (0.75, 0.7, 0.6)
    ring_heights: tuple = (0.1, 0.3, 0.55)
    cameras_per_ring: int = 4
    image_width: int = 64
    image_height: int = 64
    fov_deg: float = 50.0
    background: tuple = (0.6, 0.6, 0.6)
    yaw_deg: float = None  # plant yaw; None draws it from the seed
    clutter: bool = False
    clutter_splats: int = 5000
    clutter_radius: float = 1.3
    sfm_points: int = 1500
    sfm_clutter_points: int = 3000
    sfm_noise: float = 0.002
    train_fraction: float = 0.6
    seed: int = 0

    def __post_init__(self):
        self.ring_radii = tuple(float(r) for r in self.ring_radii)
        self.ring_heights = tuple(float(h) for h in self.ring_heights)
        self.background = tuple(float(b) for b in self.background)
        self.validate()

    def validate(self):
        for name in ("cube_edge_cm", "height_cm", "width1_cm", "width2_cm", "stem_radius_cm",
                     "surface_density", "splat_sigma_factor", "fov_deg", "clutter_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.width2_cm > self.width1_cm:
            raise ConfigError("width1_cm must be >= width2_cm")
        if not 0.0 < self.canopy_fraction <= 1.0:
            raise ConfigError("canopy_fraction must lie in (0, 1]")
        if 2 * self.stem_radius_cm >= self.width2_cm:
            raise ConfigError("stem must be thinner than the canopy")
        if self.cameras_per_ring < 3:
            raise ConfigError("need at least 3 cameras per ring")
        if len(self.ring_radii) != len(self.ring_heights) or not self.ring_radii:
            raise ConfigError("ring_radii and ring_heights must have equal, nonzero length")
        if any(r <= 0 for r in self.ring_radii):
            raise ConfigError("ring radii must be positive")
        if self.clutter and self.clutter_radius <= max(self.ring_radii):
            raise ConfigError("clutter backdrop must lie outside the camera rings")
        if not 0.0 < self.opacity < 1.0:
            raise ConfigError("opacity must lie in (0, 1)")
        if self.image_width < 8 or self.image_height < 8:
            raise ConfigError("images must be at least 8x8")

    @property
    def spacing(self):
        return 1.0 / np.sqrt(self.surface_density)

    @property
    def n_cameras(self):
        return self.cameras_per_ring * len(self.ring_radii)

    def to_dict(self):
        d = asdict(self)
        for k in ("ring_radii", "ring_heights", "background"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown synth options: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class SynthScene:
    scene: GaussianScene
    labels: np.ndarray
    oracle: TraitReport
    spec: SynthSpec
    yaw: float
    colors: np.ndarray = field(repr=False, default=None)

    def foreground(self):
        return self.scene.subset(self.labels != CLUTTER)


def _ellipsoid_area(a, b, c):
    p = 1.6075
    return 4 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3.0) ** (1.0 / p)


def sample_ellipsoid_shell(a, b, c, n, rng):
    """Area-uniform samples on an ellipsoid surface (rejection on the
    sphere-to-ellipsoid area factor)."""
    out = []
    gmax = max(b * c, a * c, a * b)
    while sum(len(o) for o in out) < n:
        u = rng.normal(size=(2 * n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        g = np.sqrt((b * c * u[:, 0]) ** 2 + (a * c * u[:, 1]) ** 2 + (a * b * u[:, 2]) ** 2)
        keep = rng.uniform(size=len(u)) * gmax < g
        out.append(u[keep] * np.array([a, b, c]))
    return np.concatenate(out)[:n]


def sample_cube_faces(edge, n, rng):
    """Uniform samples on the six faces of an axis-aligned cube centered at
    the origin, plus its eight corners so the extent is exact."""
    h = edge / 2.0
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-h, h, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    for ax in range(3):
        sel = axis == ax
        others = [i for i in range(3) if i != ax]
        pts[sel, ax] = sign[sel] * h
        pts[sel, others[0]] = uv[sel, 0]
        pts[sel, others[1]] = uv[sel, 1]
    corners = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    return np.concatenate([pts, corners]), np.concatenate([face, np.full(8, -1)])


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _plant_colors(p, height, rng):
    # smooth leaf-like variation; no per-splat noise so views stay consistent
    theta = np.arctan2(p[:, 1], p[:, 0])
    t = np.clip(p[:, 2] / height, 0.0, 1.0)
    wave = 0.5 + 0.5 * np.sin(3.0 * theta + 6.0 * t)
    base = np.array([0.18, 0.45, 0.16])
    tip = np.array([0.35, 0.68, 0.22])
    col = base + (tip - base) * (0.6 * t + 0.4 * wave)[:, None]
    return np.clip(col, 0.0, 1.0)


def _cube_colors(face):
    shade = np.array([0.95, 0.75, 0.85, 0.65, 1.0, 0.55, 0.9])  # last entry for corners
    base = np.array([0.86, 0.72, 0.5])
    return base[None, :] * shade[face][:, None]


def _clutter(spec, center, rng):
    """Textured backdrop: a cylindrical wall plus a floor annulus."""
    r = spec.clutter_radius
    z_lo, z_hi = -0.1, 1.3
    wall_area = 2 * np.pi * r * (z_hi - z_lo)
    floor_area = np.pi * (r ** 2 - 0.35 ** 2)
    n = spec.clutter_splats
    n_wall = int(round(n * wall_area / (wall_area + floor_area)))
    th = rng.uniform(0, 2 * np.pi, n_wall)
    z = rng.uniform(z_lo, z_hi, n_wall)
    wall = np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
    n_floor = n - n_wall
    rad = np.sqrt(rng.uniform(0.35 ** 2, r ** 2, n_floor))
    ph = rng.uniform(0, 2 * np.pi, n_floor)
    floor = np.stack([rad * np.cos(ph), rad * np.sin(ph), np.full(n_floor, z_lo)], axis=1)
    pts = np.concatenate([wall, floor])
    pts[:, :2] += center[:2]
    freq = rng.uniform(2.0, 7.0, size=(3, 3))
    phase = rng.uniform(0, 2 * np.pi, size=(3, 3))
    ang = np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0])
    feats = np.stack([ang, pts[:, 2] * 3.0, np.hypot(pts[:, 0], pts[:, 1]) * 3.0], axis=1)
    col = 0.55 + 0.35 * np.sin(feats @ freq.T + phase.sum(axis=1)) * np.array([1.0, 0.8, 0.9])
    sigma = 0.7 * np.sqrt((wall_area + floor_area) / n)
    return pts, np.clip(col, 0.0, 1.0), sigma


def oracle_report(spec):
    edge = spec.cube_edge_cm / 100.0
    return TraitReport(scale_factor=spec.cube_edge_cm / edge, cube_edge_measured=edge,
                       height_cm=spec.height_cm, width1_cm=spec.width1_cm,
                       width2_cm=spec.width2_cm, plant_id=f"synth-{spec.seed}", cube_score=1.0)


def generate_scene(spec: SynthSpec):
    """Build the ground-truth splat scene, membership labels and trait oracle."""
    rng = np.random.default_rng(spec.seed)
    cm = 0.01
    height = spec.height_cm * cm
    a, b = spec.width1_cm * cm / 2.0, spec.width2_cm * cm / 2.0
    c = spec.canopy_fraction * height / 2.0
    zc = height - c
    yaw = np.deg2rad(spec.yaw_deg) if spec.yaw_deg is not None else rng.uniform(0, np.pi)
    rot = _rot_z(yaw)
    density = spec.surface_density

    n_canopy = max(int(density * _ellipsoid_area(a, b, c)), 50)
    canopy = sample_ellipsoid_shell(a, b, c, n_canopy, rng)
    extremes = np.array([[a, 0, 0], [-a, 0, 0], [0, b, 0], [0, -b, 0], [0, 0, c], [0, 0, -c]])
    canopy = np.concatenate([canopy, extremes]) + np.array([0.0, 0.0, zc])

    rs = spec.stem_radius_cm * cm
    stem_len = zc
    n_stem = max(int(density * 2 * np.pi * rs * stem_len), 12)
    phi = rng.uniform(0, 2 * np.pi, n_stem)
    sz = rng.uniform(0, stem_len, n_stem)
    stem = np.stack([rs * np.cos(phi), rs * np.sin(phi), sz], axis=1)
    ring = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    stem = np.concatenate([stem, np.stack([rs * np.cos(ring), rs * np.sin(ring),
                                           np.zeros(8)], axis=1)])
    plant = np.concatenate([canopy, stem]) @ rot.T
    plant_col = _plant_colors(np.concatenate([canopy, stem]), height, rng)
    plant_col[len(canopy):] = [0.4, 0.42, 0.2]

    edge = spec.cube_edge_cm * cm
    n_cube = max(int(density * 6 * edge ** 2), 600)
    cube, face = sample_cube_faces(edge, n_cube, rng)
    dist = a + 0.06 + edge * np.sqrt(0.5)
    ang = np.deg2rad(-60.0)
    cube_center = np.array([dist * np.cos(ang), dist * np.sin(ang), edge / 2.0])
    cube = cube + cube_center
    cube_col = _cube_colors(face)

    sigma = spec.splat_sigma_factor * spec.spacing
    positions = [cube, plant]
    colors = [cube_col, plant_col]
    sigmas = [np.full(len(cube), sigma), np.full(len(plant), sigma)]
    labels = [np.full(len(cube), CUBE), np.full(len(plant), PLANT)]
    if spec.clutter:
        center = np.concatenate([cube, plant]).mean(axis=0)
        pts, col, csig = _clutter(spec, center, rng)
        positions.append(pts)
        colors.append(col)
        sigmas.append(np.full(len(pts), csig))
        labels.append(np.full(len(pts), CLUTTER))
    positions = np.concatenate(positions)
    colors = np.concatenate(colors)
    scene = GaussianScene.from_arrays(positions, colors, np.concatenate(sigmas), spec.opacity,
                                      sh_degree=0)
    return SynthScene(scene, np.concatenate(labels), oracle_report(spec), spec, float(yaw),
                      colors)


def ring_cameras(spec, target):
    """Cameras on horizontal rings around ``target``; successive rings are
    staggered in azimuth."""
    w, h = spec.image_width, spec.image_height
    f = 0.5 * w / np.tan(np.deg2rad(spec.fov_deg) / 2.0)
    cams = []
    n = spec.cameras_per_ring
    for ring, (radius, z) in enumerate(zip(spec.ring_radii, spec.ring_heights)):
        for k in range(n):
            az = 2 * np.pi * (k + ring / len(spec.ring_radii)) / n
            eye = np.array([target[0] + radius * np.cos(az), target[1] + radius * np.sin(az), z])
            cams.append(CameraView.look_at(eye, target, (0.0, 0.0, 1.0), f, f, w, h,
                                           name=f"frame_{ring}_{k:02d}.png"))
    return cams


@dataclass
class SynthDataset:
    synth: SynthScene
    views: list
    split: list
    points: np.ndarray
    point_colors: np.ndarray
    manifest: Manifest = None

    def as_dataset(self):
        train = [v for v, s in zip(self.views, self.split) if s == "train"]
        test = [v for v, s in zip(self.views, self.split) if s == "test"]
        return Dataset(train, test, self.points, self.point_colors)


def quantize(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def render_ground_truth(synth, camera):
    """Returns (rgb, mask). Masks come from a foreground-only render."""
    spec = synth.spec
    scene = synth.scene
    limit = max(len(scene), 1)
    full = render_reference(scene, camera, spec.background, limit=limit)
    fg = synth.foreground()
    mask = render_reference(fg, camera, (0.0, 0.0, 0.0), limit=limit).alpha_acc > 0.5
    return quantize(full.rgb), mask.astype(np.float64)


def sfm_points(synth, rng):
    """Sparse, noisy samples of the visible surfaces standing in for an SfM
    reconstruction."""
    spec = synth.spec
    labels = synth.labels
    picks = []
    fg = np.flatnonzero(labels != CLUTTER)
    picks.append(rng.choice(fg, size=min(spec.sfm_points, len(fg)), replace=False))
    bg = np.flatnonzero(labels == CLUTTER)
    if len(bg):
        picks.append(rng.choice(bg, size=min(spec.sfm_clutter_points, len(bg)), replace=False))
    idx = np.sort(np.concatenate(picks))
    pts = synth.scene.positions[idx].astype(np.float64)
    pts = pts + rng.normal(scale=spec.sfm_noise, size=pts.shape)
    cols = np.clip(synth.colors[idx] + rng.normal(scale=0.03, size=(len(idx), 3)), 0.0, 1.0)
    # quantize like an 8-bit points3D export
    return pts, np.round(cols * 255.0) / 255.0


def generate_dataset(spec: SynthSpec, synth=None):
    synth = synth if synth is not None else generate_scene(spec)
    rng = np.random.default_rng(spec.seed + 1)
    fg = synth.scene.positions[synth.labels != CLUTTER].astype(np.float64)
    target = 0.5 * (fg.min(axis=0) + fg.max(axis=0))
    views = []
    for cam in ring_cameras(spec, target):
        rgb, mask = render_ground_truth(synth, cam)
        views.append(View(cam, RgbaFrame(rgb, mask, cam.name)))
    split = [r.split for r in split_dataset([v.name for v in views], spec.train_fraction,
                                            spec.seed)]
    pts, cols = sfm_points(synth, rng)
    return SynthDataset(synth, views, split, pts, cols)


def write_dataset(data: SynthDataset, out_dir):
    """Materialize images/, colmap_text/, manifest.json and oracle files."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    spec = data.synth.spec
    for v in data.views:
        save_rgba(out / "images" / v.name, v.frame.rgb, v.frame.alpha)
    cams = [v.camera for v in data.views]
    write_colmap_text(out / "colmap_text", cams, data.points, data.point_colors)
    records = []
    for i, (v, s) in enumerate(zip(data.views, data.split), start=1):
        q = rotmat_to_quat(v.camera.rotation)
        records.append(FrameRecord(v.name, i, [float(x) for x in q],
                                   [float(x) for x in v.camera.translation], s))
    cameras = {i: {"model": "PINHOLE", "width": c.width, "height": c.height,
                   "intrinsics": [float(c.fx), float(c.fy), float(c.cx), float(c.cy)]}
               for i, c in enumerate(cams, start=1)}
    manifest = Manifest(records, cameras, downsample_factor=1, seed=spec.seed,
                        train_fraction=spec.train_fraction)
    manifest.save(out / "manifest.json")
    data.manifest = manifest
    (out / "oracle_traits.txt").write_text(data.synth.oracle.to_text(), encoding="utf-8")
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True)
                                         + "\n", encoding="utf-8")
    export_ply(data.synth.scene, out / "ground_truth.ply")
    np.save(out / "ground_truth_labels.npy", data.synth.labels)
    return out / "manifest.json"


def plant_batch(n, seed=0, **overrides):
    """Specs for ``n`` plants with randomized height and crown widths."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n):
        w1 = rng.uniform(20.0, 36.0)
        w2 = rng.uniform(0.6, 0.95) * w1
        h = rng.uniform(14.0, 30.0)
        specs.append(SynthSpec(height_cm=float(h), width1_cm=float(w1), width2_cm=float(w2),
                               seed=seed * 1000 + i, **overrides))
    return specs


def dc_colors(scene):
    return shlib.dc_to_rgb(scene.sh[:, 0, :].astype(np.float64))


__all__ = ["CLUTTER", "CUBE", "PLANT", "SynthDataset", "SynthScene", "SynthSpec",
           "generate_dataset", "generate_scene", "oracle_report", "plant_batch",
           "render_ground_truth", "ring_cameras", "write_dataset"]
