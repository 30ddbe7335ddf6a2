"""Dataset ingestion and persistence."""

from .colmap import ColmapModel, load_colmap_text, write_colmap_text
from .frames import Dataset, RgbaFrame, View
from .images import area_downsample, load_rgba, save_rgba
from .manifest import (FrameRecord, Manifest, load_dataset, manifest_from_colmap,
                       split_dataset, split_indices)
from .ply import PlyContent, export_ply, import_ply, load_scene

__all__ = [
    "ColmapModel", "Dataset", "FrameRecord", "Manifest", "PlyContent", "RgbaFrame", "View",
    "area_downsample", "export_ply", "import_ply", "load_colmap_text", "load_dataset",
    "load_rgba", "load_scene", "manifest_from_colmap", "save_rgba", "split_dataset",
    "split_indices", "write_colmap_text",
]
