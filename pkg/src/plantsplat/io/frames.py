"""In-memory supervision frames and datasets."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DatasetError


@dataclass
class RgbaFrame:
    rgb: np.ndarray
    alpha: np.ndarray = None
    name: str = ""

    @property
    def height(self):
        return self.rgb.shape[0]

    @property
    def width(self):
        return self.rgb.shape[1]


@dataclass
class View:
    camera: object
    frame: RgbaFrame

    @property
    def name(self):
        return self.frame.name or self.camera.name


@dataclass
class Dataset:
    train: list
    test: list = field(default_factory=list)
    points: np.ndarray = None
    point_colors: np.ndarray = None

    def check(self, need_masks=False):
        if len(self.train) == 0:
            raise DatasetError("dataset has no training views")
        for v in self.train:
            if v.camera is None:
                raise DatasetError(f"view {v.name!r} has no pose")
            if (v.frame.height, v.frame.width) != (v.camera.height, v.camera.width):
                raise DatasetError(
                    f"view {v.name!r}: image {v.frame.width}x{v.frame.height} does not match "
                    f"camera {v.camera.width}x{v.camera.height}")
            if need_masks and v.frame.alpha is None:
                raise DatasetError(f"view {v.name!r} has no alpha mask")

    def camera_centers(self):
        return np.array([v.camera.center for v in self.train + self.test])

    def scene_extent(self):
        """Radius of the training camera cloud around its centroid, padded by
        10%, used to scale positional learning rates."""
        centers = np.array([v.camera.center for v in self.train])
        mid = centers.mean(axis=0)
        radius = float(np.max(np.linalg.norm(centers - mid, axis=1)))
        return 1.1 * max(radius, 1e-6)
