"""Height and crown width measurements."""

import numpy as np

from ..errors import EmptyCloudError, EstimationError, InvalidParameterError


def _unit(v):
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise InvalidParameterError("up axis must be a finite nonzero vector")
    return v / n


def ground_basis(up):
    """Two orthonormal vectors spanning the plane orthogonal to ``up``."""
    up = _unit(up)
    helper = np.eye(3)[int(np.argmin(np.abs(up)))]
    e1 = np.cross(up, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(up, e1)
    return e1, e2


def plant_height(points, scale, up_axis=(0.0, 0.0, 1.0), robust=False,
                 percentiles=(0.5, 99.5)):
    """Extent along ``up_axis`` times ``scale``; ``robust`` swaps max/min for
    percentiles."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyCloudError("plant cluster is empty")
    h = points @ _unit(up_axis)
    if robust:
        lo, hi = np.percentile(h, percentiles)
    else:
        lo, hi = h.min(), h.max()
    return float(scale * (hi - lo))


def crown_width(points, scale, up_axis=(0.0, 0.0, 1.0)):
    """Ground-plane extents along the two principal axes.

    Returns (width1, width2, axes) with axes as rows in world coordinates,
    width1 >= width2.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 3:
        raise EstimationError(f"need at least 3 points for crown width, got {len(points)}")
    e1, e2 = ground_basis(up_axis)
    xy = np.stack([points @ e1, points @ e2], axis=1)
    xy = xy - xy.mean(axis=0)
    vals, vecs = np.linalg.eigh(np.cov(xy.T))
    if vals[1] <= 0 or vals[0] <= 1e-12 * vals[1]:
        raise EstimationError(
            f"projected crown is degenerate (eigenvalues {vals[1]:.3g}, {vals[0]:.3g})")
    major, minor = vecs[:, 1], vecs[:, 0]
    w = [float(scale * np.ptp(xy @ major)), float(scale * np.ptp(xy @ minor))]
    axes = np.stack([major[0] * e1 + major[1] * e2, minor[0] * e1 + minor[1] * e2])
    if w[1] > w[0]:
        # extent order can disagree with variance order on odd shapes
        w.reverse()
        axes = axes[::-1]
    return w[0], w[1], axes
