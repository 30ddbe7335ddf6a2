"""Metric plant traits from reconstructed point clouds."""

from .cluster import NOISE, LabeledCloud, dbscan, default_eps, extract_points
from .cube import (CubeChoice, CubeEdge, OrientedBox, Plane, compute_scale, estimate_cube_edge,
                   identify_cube, oriented_box, ransac_plane)
from .geometry import crown_width, ground_basis, plant_height
from .pipeline import TraitConfig, extract_traits
from .report import CSV_COLUMNS, TraitReport, parse_report_text, reports_to_csv, write_csv

__all__ = [
    "NOISE", "LabeledCloud", "dbscan", "default_eps", "extract_points",
    "CubeChoice", "CubeEdge", "OrientedBox", "Plane", "compute_scale", "estimate_cube_edge",
    "identify_cube", "oriented_box", "ransac_plane",
    "crown_width", "ground_basis", "plant_height",
    "TraitConfig", "extract_traits",
    "CSV_COLUMNS", "TraitReport", "parse_report_text", "reports_to_csv", "write_csv",
]
