"""Classical imaging tools behind the inspection agent.

Hot kernels run in a compiled extension when available and fall back to a
bit-identical numpy/scipy implementation otherwise; see ``backend``.
"""

from .backend import active_backend, get_kernels
from .ops import (
    ForegroundResult,
    clahe,
    crop,
    edge_map,
    foreground_extract,
    measure_angle,
    measure_distance,
    median_blur,
    otsu_threshold,
    parse_points,
    parse_region,
)
from .types import BBox, ImagingError, Measurement, Point, RasterImage

__all__ = [
    "BBox",
    "ForegroundResult",
    "ImagingError",
    "Measurement",
    "Point",
    "RasterImage",
    "active_backend",
    "clahe",
    "crop",
    "edge_map",
    "foreground_extract",
    "get_kernels",
    "measure_angle",
    "measure_distance",
    "median_blur",
    "otsu_threshold",
    "parse_points",
    "parse_region",
]
