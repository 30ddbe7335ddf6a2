"""Image-quality and trait-accuracy metrics."""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, NumericalError, ParseError
from .optim.losses import ssim as _ssim

PSNR_IDENTICAL = float("inf")


def _max_intensity(a, b):
    if a.dtype == np.uint8 and b.dtype == np.uint8:
        return 255.0
    return 1.0


def psnr(a, b, max_intensity=None):
    """Peak signal-to-noise ratio in dB; identical inputs give +inf.

    ``max_intensity`` defaults to 255 for uint8 pairs and 1.0 otherwise.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidParameterError(f"image shapes differ: {a.shape} vs {b.shape}")
    peak = _max_intensity(a, b) if max_intensity is None else float(max_intensity)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(peak * peak / mse))


def ssim(a, b):
    """Mean SSIM; uint8 inputs are rescaled to [0, 1] first."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidParameterError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.dtype == np.uint8:
        a = a / 255.0
    if b.dtype == np.uint8:
        b = b / 255.0
    return _ssim(a, b)


# perceptual distance from precomputed features

@dataclass
class FeatureLayer:
    layer_id: int
    features: np.ndarray  # (H, W, C), unit norm along C
    weights: np.ndarray  # (C,)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.features.ndim != 3:
            raise InvalidParameterError("layer features must be (H, W, C)")
        if self.weights.shape[0] != self.features.shape[2]:
            raise InvalidParameterError(
                f"layer {self.layer_id}: {self.weights.shape[0]} weights for "
                f"{self.features.shape[2]} channels")


@dataclass
class FeatureStack:
    layers: list
    tolerance: float = 1e-5

    def __post_init__(self):
        for layer in self.layers:
            norms = np.linalg.norm(layer.features, axis=2)
            if norms.size and np.max(np.abs(norms - 1.0)) > self.tolerance:
                raise InvalidParameterError(
                    f"layer {layer.layer_id}: feature vectors are not unit length")

    @classmethod
    def from_raw(cls, layers):
        """Build from (layer_id, features, weights) triples, normalizing each
        spatial feature vector."""
        out = []
        for lid, feat, w in layers:
            feat = np.asarray(feat, dtype=np.float64)
            norm = np.linalg.norm(feat, axis=2, keepdims=True)
            out.append(FeatureLayer(int(lid), feat / np.maximum(norm, 1e-10), w))
        return cls(out)

    def signature(self):
        return [(l.layer_id, *l.features.shape) for l in self.layers]


def lpips_from_features(fa, fb):
    """Sum over layers of the spatially averaged squared weighted feature
    difference."""
    if fa.signature() != fb.signature():
        raise InvalidParameterError(
            f"feature stacks differ in layer structure: {fa.signature()} vs {fb.signature()}")
    total = 0.0
    for la, lb in zip(fa.layers, fb.layers):
        if not np.array_equal(la.weights, lb.weights):
            raise InvalidParameterError(f"layer {la.layer_id}: channel weights differ")
        d = la.weights * (la.features - lb.features)
        h, w = d.shape[:2]
        total += float(np.sum(d * d)) / (h * w)
    return total


def write_feature_stack(path, stack):
    """Binary layout, little endian: uint32 layer count; per layer four
    uint32 (id, H, W, C); then per layer H*W*C float32 features followed by
    C float32 weights."""
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(stack.layers)))
        for l in stack.layers:
            f.write(struct.pack("<4I", l.layer_id, *l.features.shape))
        for l in stack.layers:
            f.write(l.features.astype("<f4").tobytes())
            f.write(l.weights.astype("<f4").tobytes())


def read_feature_stack(path):
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ParseError("truncated feature stack", path=path, offset=pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    heads = [struct.unpack("<4I", take(16)) for _ in range(count)]
    layers = []
    for lid, h, w, c in heads:
        feat = np.frombuffer(take(4 * h * w * c), dtype="<f4").reshape(h, w, c)
        weights = np.frombuffer(take(4 * c), dtype="<f4")
        layers.append(FeatureLayer(lid, feat.astype(np.float64), weights.astype(np.float64)))
    if pos != len(data):
        raise ParseError(f"{len(data) - pos} trailing bytes in feature stack", path=path,
                         offset=pos)
    # float32 storage loses a little of the unit norm
    return FeatureStack(layers, tolerance=1e-5)


# trait accuracy

def _series(y, y_hat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise InvalidParameterError(f"series lengths differ: {y.size} vs {y_hat.size}")
    if y.size == 0:
        raise InvalidParameterError("empty series")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(y_hat))):
        raise InvalidParameterError("series contain non-finite values")
    return y, y_hat


def r2(y, y_hat):
    y, y_hat = _series(y, y_hat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise NumericalError("R^2 undefined: ground truth has zero variance")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def rmse(y, y_hat):
    y, y_hat = _series(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def mae(y, y_hat):
    y, y_hat = _series(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def mape(y, y_hat):
    """Mean absolute percentage error, in percent."""
    y, y_hat = _series(y, y_hat)
    if np.any(y == 0.0):
        raise InvalidParameterError("MAPE undefined: ground truth contains zeros")
    return float(100.0 * np.mean(np.abs((y - y_hat) / y)))


def accuracy(y, y_hat):
    """100 minus MAPE, in percent."""
    return 100.0 - mape(y, y_hat)


def trait_summary(y, y_hat):
    """All accuracy metrics for one trait; R^2 is NaN for constant truth."""
    try:
        r = r2(y, y_hat)
    except NumericalError:
        r = float("nan")
    m = mape(y, y_hat)
    return {"r2": r, "rmse": rmse(y, y_hat), "mape": m, "mae": mae(y, y_hat),
            "accuracy": 100.0 - m}


__all__ = [
    "PSNR_IDENTICAL", "FeatureLayer", "FeatureStack", "accuracy", "lpips_from_features", "mae",
    "mape", "psnr", "r2", "read_feature_stack", "rmse", "ssim", "trait_summary",
    "write_feature_stack",
]
