"""Point extraction and density-based clustering."""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ..errors import EmptyCloudError, InvalidParameterError

NOISE = -1


@dataclass
class LabeledCloud:
    points: np.ndarray
    labels: np.ndarray

    @property
    def n_clusters(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def cluster(self, cid):
        return self.points[self.labels == cid]

    def sizes(self):
        return np.bincount(self.labels[self.labels >= 0], minlength=self.n_clusters)


def extract_points(scene, opacity_min=0.5):
    """Centers of splats whose activated opacity is at least ``opacity_min``."""
    keep = scene.opacities >= opacity_min
    if not np.any(keep):
        raise EmptyCloudError(f"no splat reaches opacity {opacity_min}")
    return scene.positions[keep].astype(np.float64)


def default_eps(points, k=8):
    """Twice the median distance to the k-th nearest neighbour."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 1.0
    k = min(k, len(points) - 1)
    dist, _ = cKDTree(points).query(points, k=k + 1)
    eps = 2.0 * float(np.median(dist[:, k]))
    if eps <= 0.0:
        # many coincident points; fall back to the cloud size
        span = float(np.max(np.ptp(points, axis=0)))
        eps = span * 1e-3 if span > 0 else 1.0
    return eps


def dbscan(points, eps, min_pts):
    """Density clustering with inclusive neighbourhoods (distance <= eps,
    the point itself counted).

    Cluster ids follow the order of each cluster's lowest-index core point.
    A border point joins the lowest-id cluster among the cores reaching it,
    which is what a sequential scan in index order produces.
    """
    if not eps > 0:
        raise InvalidParameterError("eps must be positive")
    if min_pts < 1:
        raise InvalidParameterError("min_pts must be >= 1")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return LabeledCloud(points, labels)
    pairs = cKDTree(points).query_pairs(eps, output_type="ndarray")
    i, j = (pairs[:, 0], pairs[:, 1]) if len(pairs) else (np.zeros(0, int), np.zeros(0, int))
    counts = 1 + np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    core = counts >= min_pts
    if not np.any(core):
        return LabeledCloud(points, labels)

    # connected components of the core-core neighbour graph
    both = core[i] & core[j]
    graph = coo_matrix((np.ones(int(both.sum())), (i[both], j[both])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    core_idx = np.flatnonzero(core)
    comp_core = comp[core_idx]
    # renumber components by their first core index
    uniq, first_pos = np.unique(comp_core, return_index=True)
    rank = np.empty(comp.max() + 1, dtype=np.int64)
    rank[uniq[np.argsort(first_pos)]] = np.arange(len(uniq))
    labels[core_idx] = rank[comp_core]

    # border points: non-core with at least one core neighbour
    cand = np.full(n, np.iinfo(np.int64).max)
    for a, b in ((i, j), (j, i)):
        sel = core[a] & ~core[b]
        np.minimum.at(cand, b[sel], labels[a[sel]])
    border = ~core & (cand != np.iinfo(np.int64).max)
    labels[border] = cand[border]
    return LabeledCloud(points, labels)
