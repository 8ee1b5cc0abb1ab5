"""Public imaging operations used by the inspection tools.

All functions validate their inputs and speak :class:`RasterImage`; the pixel
loops live in the selected kernel backend.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import _common
from .backend import get_kernels
from .types import BBox, ImagingError, Measurement, Point, RasterImage

otsu_threshold = _common.otsu_threshold


def crop(image: RasterImage, bbox: BBox) -> RasterImage:
    """Cut the half-open box out of the image. Bounds are checked."""
    if bbox.x1 > image.width or bbox.y1 > image.height:
        raise ImagingError(
            f"bbox {bbox.as_tuple()} exceeds image bounds {image.width}x{image.height}"
        )
    arr = image.to_array()
    return RasterImage.from_array(arr[bbox.y0 : bbox.y1, bbox.x0 : bbox.x1])


def median_blur(image: RasterImage, ksize: int = 31) -> RasterImage:
    """Square median filter on the grayscale image (replicate borders)."""
    if ksize < 3 or ksize % 2 == 0:
        raise ImagingError(f"median kernel must be odd and >= 3, got {ksize}")
    gray = image.to_gray().to_array()
    return RasterImage.from_array(get_kernels().median_blur_u8(gray, ksize))


def clahe(image: RasterImage, clip_limit: float = 2.0, tiles: tuple[int, int] = (8, 8)) -> RasterImage:
    """Contrast-limited adaptive histogram equalization (grayscale output).

    Args:
        clip_limit: per-tile histogram cap as a multiple of the uniform bin
            height; must be >= 1, inf disables clipping.
        tiles: (nx, ny) tile grid; each axis needs at least one pixel per tile.
    """
    nx, ny = tiles
    if not (clip_limit >= 1.0 or math.isinf(clip_limit)):
        raise ImagingError(f"clip limit must be >= 1, got {clip_limit}")
    if math.isnan(clip_limit):
        raise ImagingError("clip limit must not be NaN")
    gray = image.to_gray().to_array()
    if nx < 1 or ny < 1:
        raise ImagingError(f"tile grid must be >= 1x1, got {nx}x{ny}")
    if nx > image.width or ny > image.height:
        raise ImagingError(
            f"tile grid {nx}x{ny} exceeds image size {image.width}x{image.height}"
        )
    return RasterImage.from_array(get_kernels().clahe_u8(gray, float(clip_limit), nx, ny))


def edge_map(image: RasterImage, low: float = 50.0, high: float = 150.0) -> RasterImage:
    """Canny edge map; output pixels are 0 or 255."""
    if not (math.isfinite(low) and math.isfinite(high)):
        raise ImagingError("thresholds must be finite")
    if low < 0 or low > high:
        raise ImagingError(f"need 0 <= low <= high, got low={low} high={high}")
    gray = image.to_gray().to_array()
    return RasterImage.from_array(get_kernels().canny_u8(gray, float(low), float(high)))


@dataclass(frozen=True)
class ForegroundResult:
    """Outcome of foreground extraction."""

    bbox: BBox
    threshold: int
    foreground_fraction: float
    fallback: bool


def _center_half_box(width: int, height: int) -> BBox:
    w2 = max(1, width // 2)
    h2 = max(1, height // 2)
    x0 = (width - w2) // 2
    y0 = (height - h2) // 2
    return BBox(x0, y0, x0 + w2, y0 + h2)


def foreground_extract(
    image: RasterImage,
    background: RasterImage | None = None,
    *,
    median_kernel: int = 31,
) -> ForegroundResult:
    """Locate the dominant foreground object.

    Pipeline: median-blur background estimate (unless one is supplied),
    absolute difference, Otsu threshold, 3x3 open+close, largest connected
    component bbox. An empty or >95%-full mask falls back to the centered
    half-size box.
    """
    kernels = get_kernels()
    gray = image.to_gray().to_array()
    if background is None:
        bg = kernels.median_blur_u8(gray, median_kernel) if min(gray.shape) >= 3 else gray
    else:
        if (background.width, background.height) != (image.width, image.height):
            raise ImagingError(
                f"background size {background.width}x{background.height} "
                f"!= image size {image.width}x{image.height}"
            )
        bg = background.to_gray().to_array()
    diff = np.abs(gray.astype(np.int16) - bg.astype(np.int16)).astype(np.uint8)
    hist = np.bincount(diff.ravel(), minlength=256)
    threshold = _common.otsu_threshold(hist.tolist())
    mask = diff > threshold
    mask = kernels.binary_close3(kernels.binary_open3(mask))
    fraction = float(mask.mean())
    if not mask.any() or fraction > 0.95:
        return ForegroundResult(
            _center_half_box(image.width, image.height), threshold, fraction, True
        )
    box = kernels.largest_component_bbox(mask)
    assert box is not None
    return ForegroundResult(BBox(*box), threshold, fraction, False)


def measure_distance(
    a: Point,
    b: Point,
    *,
    units_per_pixel: float | None = None,
    unit: str = "px",
) -> Measurement:
    """Euclidean distance between two points, optionally in physical units."""
    if units_per_pixel is None:
        if unit != "px":
            raise ImagingError("a physical unit requires units_per_pixel")
        return Measurement(math.hypot(b.x - a.x, b.y - a.y), "px")
    if not math.isfinite(units_per_pixel) or units_per_pixel <= 0:
        raise ImagingError(f"units_per_pixel must be positive, got {units_per_pixel}")
    return Measurement(math.hypot(b.x - a.x, b.y - a.y) * units_per_pixel, unit)


def measure_angle(a: Point, vertex: Point, b: Point) -> Measurement:
    """Angle at the vertex between rays to a and b, in degrees [0, 180]."""
    ax, ay = a.x - vertex.x, a.y - vertex.y
    bx, by = b.x - vertex.x, b.y - vertex.y
    na = math.hypot(ax, ay)
    nb = math.hypot(bx, by)
    if na == 0.0 or nb == 0.0:
        raise ImagingError("angle undefined: a ray has zero length")
    cosine = (ax * bx + ay * by) / (na * nb)
    cosine = max(-1.0, min(1.0, cosine))
    return Measurement(math.degrees(math.acos(cosine)), "deg")


# a digit run inside an identifier (x0=5) must not read as a number itself
_NUMBER_RE = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?")


def parse_region(text: str) -> BBox | None:
    """Pull an (x0, y0, x1, y1) box out of free text; None when absent/invalid."""
    numbers = _NUMBER_RE.findall(text)
    if len(numbers) < 4:
        return None
    x0, y0, x1, y1 = (int(round(float(n))) for n in numbers[:4])
    if x0 < 0 or y0 < 0 or x1 <= x0 or y1 <= y0:
        return None
    return BBox(x0, y0, x1, y1)


def parse_points(text: str) -> list[Point]:
    """All (x, y) pairs found in free text, consumed as consecutive numbers."""
    numbers = [float(n) for n in _NUMBER_RE.findall(text)]
    return [Point(numbers[i], numbers[i + 1]) for i in range(0, len(numbers) - 1, 2)]
