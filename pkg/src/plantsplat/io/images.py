"""RGBA frame loading, area downsampling and PNG output."""

from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import InvalidParameterError, MissingMaskError
from .frames import RgbaFrame


def area_downsample(img, factor):
    """Box-filter downsample by an integer factor.

    Output size is the floor of input / factor. When the size is not a
    multiple of the factor, the last row and column of cells stretch to the
    image edge so that no input pixel is discarded.
    """
    img = np.asarray(img, dtype=np.float64)
    factor = int(factor)
    if factor < 1:
        raise InvalidParameterError("downsample factor must be >= 1")
    if factor == 1:
        return img.copy()
    h, w = img.shape[:2]
    oh, ow = h // factor, w // factor
    if oh == 0 or ow == 0:
        raise InvalidParameterError(f"image {w}x{h} is smaller than factor {factor}")
    # cell boundaries, last cell absorbs the remainder
    ys = np.arange(oh + 1) * factor
    xs = np.arange(ow + 1) * factor
    ys[-1], xs[-1] = h, w
    summed = np.add.reduceat(np.add.reduceat(img, ys[:-1], axis=0), xs[:-1], axis=1)
    counts = np.outer(np.diff(ys), np.diff(xs))
    if img.ndim == 3:
        counts = counts[:, :, None]
    return summed / counts


def binarize(alpha, threshold=0.5):
    return (np.asarray(alpha) >= threshold).astype(np.float64)


def load_rgba(path, downsample_factor=4, require_alpha=True, name=None):
    """Read an 8-bit PNG into an :class:`RgbaFrame` with values in [0, 1].

    The alpha channel is area-averaged and then thresholded at 0.5. Images
    without alpha raise :class:`MissingMaskError` unless ``require_alpha``
    is false, in which case the frame carries no mask.
    """
    path = Path(path)
    with Image.open(path) as im:
        has_alpha = im.mode in ("RGBA", "LA") or "transparency" in im.info
        if has_alpha:
            arr = np.asarray(im.convert("RGBA"), dtype=np.float64) / 255.0
        else:
            if require_alpha:
                raise MissingMaskError(f"{path} has no alpha channel")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    arr = area_downsample(arr, downsample_factor)
    rgb = arr[..., :3]
    alpha = binarize(arr[..., 3]) if has_alpha else None
    return RgbaFrame(rgb=rgb, alpha=alpha, name=name or path.name)


def to_uint8(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_rgba(path, rgb, alpha=None):
    rgb8 = to_uint8(rgb)
    if alpha is None:
        Image.fromarray(rgb8, "RGB").save(path)
    else:
        a8 = to_uint8(alpha)[..., None]
        Image.fromarray(np.concatenate([rgb8, a8], axis=2), "RGBA").save(path)


def save_alpha16(path, alpha):
    a = np.clip(np.round(np.asarray(alpha, dtype=np.float64) * 65535.0), 0, 65535)
    Image.fromarray(a.astype(np.uint16)).save(path)
