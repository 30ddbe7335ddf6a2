"""Projection, tiled rasterization and the reference renderer."""

from .projection import (ProjectedSplats, Splat2D, frustum_cull, project, project_backward,
                         project_gaussian)
from .raster import (ORACLE_LIMIT, RenderOutput, RenderSettings, rasterize, render,
                     render_reference)

__all__ = [
    "ORACLE_LIMIT",
    "ProjectedSplats",
    "RenderOutput",
    "RenderSettings",
    "Splat2D",
    "frustum_cull",
    "project",
    "project_backward",
    "project_gaussian",
    "rasterize",
    "render",
    "render_reference",
]
