"""Dataset manifest: frames, poses, cameras and the train/test split."""

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DatasetError, ParseError
from ..scene import CameraView, quat_to_rotmat
from .colmap import ColmapModel, load_colmap_text
from .frames import Dataset, View
from .images import load_rgba

SCHEMA_VERSION = 1


@dataclass
class FrameRecord:
    image: str
    camera_id: int
    qvec: list
    tvec: list
    split: str = "train"


@dataclass
class Manifest:
    frames: list
    cameras: dict
    downsample_factor: int = 4
    seed: int = 0
    train_fraction: float = 0.6
    image_dir: str = "images"
    colmap_dir: str = "colmap_text"
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    def validate(self):
        for f in self.frames:
            if f.camera_id not in self.cameras:
                raise DatasetError(f"frame {f.image!r} references unknown camera {f.camera_id}")
            if f.split not in ("train", "test"):
                raise DatasetError(f"frame {f.image!r} has invalid split {f.split!r}")

    def split_names(self, split):
        return [f.image for f in self.frames if f.split == split]

    def to_json(self):
        d = asdict(self)
        d["cameras"] = {str(k): v for k, v in sorted(self.cameras.items())}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text, path=None):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid manifest JSON: {exc.msg}", path=path,
                             line=exc.lineno) from None
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ParseError(f"unsupported manifest schema version {version!r}", path=path)
        try:
            d["frames"] = [FrameRecord(**f) for f in d["frames"]]
            d["cameras"] = {int(k): v for k, v in d["cameras"].items()}
            m = cls(**d)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed manifest: {exc}", path=path) from None
        m.validate()
        return m

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"), path=path)

    def camera_view(self, frame, factor=None):
        cam = self.cameras[frame.camera_id]
        fx, fy, cx, cy = cam["intrinsics"]
        view = CameraView(fx, fy, cx, cy, cam["width"], cam["height"],
                          quat_to_rotmat(np.array(frame.qvec)), np.array(frame.tvec),
                          name=frame.image)
        factor = self.downsample_factor if factor is None else factor
        return view.scaled(factor) if factor != 1 else view


def split_indices(n, train_fraction=0.6, seed=0):
    """Seeded shuffle; the first ceil(fraction * n) go to training.

    Returns sorted index arrays (train, test).
    """
    if n < 2:
        raise DatasetError(f"need at least 2 frames to split, got {n}")
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError("train_fraction must lie in (0, 1)")
    # guard against 0.6 * 10 = 6.000000000000001
    n_train = min(math.ceil(round(train_fraction * n, 9)), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split_dataset(frames, train_fraction=0.6, seed=0):
    """Tag a list of FrameRecord (or names) with train/test; returns new records."""
    frames = [f if isinstance(f, FrameRecord) else FrameRecord(str(f), 0, [], []) for f in frames]
    train, _ = split_indices(len(frames), train_fraction, seed)
    train = set(train.tolist())
    return [FrameRecord(f.image, f.camera_id, list(f.qvec), list(f.tvec),
                        "train" if i in train else "test") for i, f in enumerate(frames)]


def manifest_from_colmap(model: ColmapModel, factor=4, seed=0, train_fraction=0.6,
                         image_dir="images", colmap_dir="colmap_text"):
    images = sorted(model.images, key=lambda im: im.name)
    records = [FrameRecord(im.name, im.camera_id, [float(x) for x in im.qvec],
                           [float(x) for x in im.tvec]) for im in images]
    records = split_dataset(records, train_fraction, seed)
    cameras = {cid: {"model": c.model, "width": c.width, "height": c.height,
                     "intrinsics": [float(x) for x in c.intrinsics]}
               for cid, c in model.cameras.items()}
    m = Manifest(records, cameras, int(factor), int(seed), float(train_fraction),
                 str(image_dir), str(colmap_dir))
    m.validate()
    return m


def load_dataset(manifest_path, need_masks=True, threads=None):
    """Load images, cameras and sparse points referenced by a manifest."""
    manifest_path = Path(manifest_path)
    m = Manifest.load(manifest_path)
    root = manifest_path.parent
    image_dir = root / m.image_dir

    def load(frame):
        path = image_dir / frame.image
        if not path.is_file():
            raise DatasetError(f"missing image {path}")
        rgba = load_rgba(path, m.downsample_factor, require_alpha=need_masks, name=frame.image)
        return View(m.camera_view(frame), rgba)

    workers = threads or min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        views = list(pool.map(load, m.frames))
    train = [v for v, f in zip(views, m.frames) if f.split == "train"]
    test = [v for v, f in zip(views, m.frames) if f.split == "test"]
    points = colors = None
    colmap_dir = root / m.colmap_dir
    if (colmap_dir / "points3D.txt").is_file():
        model = load_colmap_text(colmap_dir)
        if model.has_points:
            points, colors = model.points, model.colors
    return Dataset(train, test, points, colors), m
