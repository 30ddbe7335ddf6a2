"""Reader/writer for the COLMAP text export (cameras.txt, images.txt,
points3D.txt). Only pinhole models are supported."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParseError, UnsupportedCameraModelError
from ..scene import CameraView, quat_to_rotmat, rotmat_to_quat

# model name -> number of parameters
MODELS = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4}


@dataclass
class ColmapCamera:
    camera_id: int
    model: str
    width: int
    height: int
    params: tuple

    @property
    def intrinsics(self):
        """(fx, fy, cx, cy)."""
        if self.model == "SIMPLE_PINHOLE":
            f, cx, cy = self.params
            return f, f, cx, cy
        return tuple(self.params)


@dataclass
class ColmapImage:
    image_id: int
    qvec: np.ndarray  # (w, x, y, z), world to camera
    tvec: np.ndarray
    camera_id: int
    name: str

    @property
    def rotation(self):
        return quat_to_rotmat(self.qvec)


@dataclass
class ColmapModel:
    cameras: dict
    images: list
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def has_points(self):
        return len(self.points) > 0

    def view(self, image):
        cam = self.cameras[image.camera_id]
        fx, fy, cx, cy = cam.intrinsics
        return CameraView(fx, fy, cx, cy, cam.width, cam.height, image.rotation, image.tvec,
                          name=image.name)

    def views(self):
        return [self.view(im) for im in self.images]


def _lines(path):
    """Yields (line number, stripped text) for non-comment, non-blank lines."""
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            text = raw.strip()
            if text and not text.startswith("#"):
                yield no, text


def _numbers(tokens, kind, path, line):
    try:
        return [kind(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"malformed number: {exc}", path=path, line=line) from None


def read_cameras(path):
    cameras = {}
    for no, text in _lines(path):
        tok = text.split()
        if len(tok) < 4:
            raise ParseError("camera line needs id, model, width, height", path=path, line=no)
        model = tok[1]
        if model not in MODELS:
            raise UnsupportedCameraModelError(
                f"unsupported camera model {model!r} (supported: {', '.join(MODELS)})",
                path=path, line=no)
        cam_id, width, height = _numbers([tok[0], tok[2], tok[3]], int, path, no)
        params = _numbers(tok[4:], float, path, no)
        if len(params) != MODELS[model]:
            raise ParseError(f"{model} expects {MODELS[model]} parameters, got {len(params)}",
                             path=path, line=no)
        cameras[cam_id] = ColmapCamera(cam_id, model, width, height, tuple(params))
    return cameras


def read_images(path):
    """Each image occupies two lines; the second (2D observations) may be
    empty and is ignored."""
    images = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    i = 0
    while i < len(lines):
        no = i + 1
        text = lines[i].strip()
        i += 1
        if not text or text.startswith("#"):
            continue
        tok = text.split()
        if len(tok) < 10:
            raise ParseError("image line needs 10 fields", path=path, line=no)
        image_id = _numbers(tok[:1], int, path, no)[0]
        vals = _numbers(tok[1:8], float, path, no)
        camera_id = _numbers(tok[8:9], int, path, no)[0]
        name = " ".join(tok[9:])
        images.append(ColmapImage(image_id, np.array(vals[:4]), np.array(vals[4:7]),
                                  camera_id, name))
        i += 1  # observation line
    return images


def read_points(path):
    pts, cols = [], []
    for no, text in _lines(path):
        tok = text.split()
        if len(tok) < 8:
            raise ParseError("point line needs id, xyz, rgb, error", path=path, line=no)
        xyz = _numbers(tok[1:4], float, path, no)
        rgb = _numbers(tok[4:7], int, path, no)
        pts.append(xyz)
        cols.append(rgb)
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.array(pts, dtype=np.float64), np.array(cols, dtype=np.float64) / 255.0


def load_colmap_text(directory):
    """Parse a COLMAP text export directory.

    Returns a :class:`ColmapModel`; point colors are scaled to [0, 1].
    An absent or empty points3D.txt gives an empty point set.
    """
    directory = Path(directory)
    for name in ("cameras.txt", "images.txt"):
        if not (directory / name).is_file():
            raise ParseError(f"missing {name}", path=directory)
    cameras = read_cameras(directory / "cameras.txt")
    images = read_images(directory / "images.txt")
    for im in images:
        if im.camera_id not in cameras:
            raise ParseError(f"image {im.name!r} references unknown camera {im.camera_id}",
                             path=directory / "images.txt")
    pts_path = directory / "points3D.txt"
    if pts_path.is_file():
        points, colors = read_points(pts_path)
    else:
        points, colors = np.zeros((0, 3)), np.zeros((0, 3))
    return ColmapModel(cameras, images, points, colors)


def write_colmap_text(directory, views, points=None, colors=None):
    """Write one PINHOLE camera per view plus images and points files.

    ``views`` are CameraView objects; their ``name`` becomes the image name.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "cameras.txt", "w", encoding="utf-8") as fh:
        fh.write("# Camera list with one line of data per camera:\n")
        fh.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for i, v in enumerate(views, start=1):
            fh.write(f"{i} PINHOLE {v.width} {v.height} {float(v.fx)!r} {float(v.fy)!r} {float(v.cx)!r} {float(v.cy)!r}\n")
    with open(directory / "images.txt", "w", encoding="utf-8") as fh:
        fh.write("# Image list with two lines of data per image:\n")
        fh.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        fh.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for i, v in enumerate(views, start=1):
            q = rotmat_to_quat(v.rotation)
            vals = " ".join(repr(float(x)) for x in (*q, *v.translation))
            fh.write(f"{i} {vals} {i} {v.name}\n\n")
    with open(directory / "points3D.txt", "w", encoding="utf-8") as fh:
        fh.write("# 3D point list with one line of data per point:\n")
        fh.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n")
        if points is not None:
            points = np.asarray(points, dtype=np.float64)
            if colors is None:
                colors = np.full(points.shape, 0.5)
            rgb = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(int)
            for i, (p, c) in enumerate(zip(points, rgb), start=1):
                fh.write(f"{i} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {c[0]} {c[1]} {c[2]} 0.0\n")
