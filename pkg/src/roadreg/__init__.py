"""Geo-registration of road point clouds against map rasters and terrain grids."""

from .errors import RoadRegError, StageError
from .model import (
    AlignmentReport,
    BinaryRaster,
    ElevationGrid,
    GeoTransform,
    PointCloud,
    RbfWarp,
    SimilarityTransform2D,
    SkeletonGraph,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentReport",
    "BinaryRaster",
    "ElevationGrid",
    "GeoTransform",
    "PointCloud",
    "RbfWarp",
    "RoadRegError",
    "SimilarityTransform2D",
    "SkeletonGraph",
    "StageError",
]
