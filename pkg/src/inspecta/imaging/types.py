"""Core imaging value types: images, boxes, points, measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image


class ImagingError(ValueError):
    """Raised on invalid imaging inputs (bounds, shapes, parameters)."""


@dataclass(frozen=True)
class BBox:
    """Half-open pixel box: x in [x0, x1), y in [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            value = getattr(self, name)
            if not isinstance(value, int):
                raise ImagingError(f"bbox {name} must be int, got {type(value).__name__}")
        if self.x0 < 0 or self.y0 < 0:
            raise ImagingError(f"bbox origin must be non-negative: {self}")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ImagingError(f"bbox must have positive extent: {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ImagingError(f"point coordinates must be finite: {self}")


@dataclass(frozen=True)
class Measurement:
    value: float
    units: str

    def render(self) -> str:
        return f"{round(self.value, 4)} {self.units}"


@dataclass(frozen=True)
class RasterImage:
    """Immutable 8-bit raster, 1 (gray) or 3 (RGB) channels, row-major bytes."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ImagingError(f"image dimensions must be positive: {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ImagingError(f"channels must be 1 or 3, got {self.channels}")
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise ImagingError(
                f"data length {len(self.data)} != {self.width}x{self.height}x{self.channels}"
            )

    @classmethod
    def from_array(cls, array: np.ndarray) -> "RasterImage":
        """Build from a (H, W) or (H, W, 3) uint8 array."""
        arr = np.asarray(array)
        if arr.dtype != np.uint8:
            raise ImagingError(f"array must be uint8, got {arr.dtype}")
        if arr.ndim == 2:
            h, w = arr.shape
            c = 1
        elif arr.ndim == 3 and arr.shape[2] in (1, 3):
            h, w, c = arr.shape
        else:
            raise ImagingError(f"unsupported array shape {arr.shape}")
        return cls(w, h, c, np.ascontiguousarray(arr).tobytes())

    def to_array(self) -> np.ndarray:
        """As (H, W) for grayscale, (H, W, 3) for RGB."""
        arr = np.frombuffer(self.data, dtype=np.uint8)
        if self.channels == 1:
            return arr.reshape(self.height, self.width).copy()
        return arr.reshape(self.height, self.width, self.channels).copy()

    def to_gray(self) -> "RasterImage":
        """Integer luma (0.299 R + 0.587 G + 0.114 B), rounded half up."""
        if self.channels == 1:
            return self
        arr = self.to_array().astype(np.float64)
        luma = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
        gray = np.floor(luma + 0.5).astype(np.uint8)
        return RasterImage.from_array(gray)

    @classmethod
    def load_png(cls, path) -> "RasterImage":
        """Load an image file; non-gray modes are converted to RGB."""
        with Image.open(path) as im:
            if im.mode == "L":
                return cls.from_array(np.asarray(im, dtype=np.uint8))
            return cls.from_array(np.asarray(im.convert("RGB"), dtype=np.uint8))

    def save_png(self, path) -> None:
        Image.fromarray(self.to_array()).save(path, format="PNG")

    def to_png_bytes(self) -> bytes:
        import io

        buf = io.BytesIO()
        Image.fromarray(self.to_array()).save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png_bytes(cls, blob: bytes) -> "RasterImage":
        import io

        return cls.load_png(io.BytesIO(blob))
