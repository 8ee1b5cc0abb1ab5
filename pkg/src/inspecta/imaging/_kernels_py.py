"""Pure-Python (numpy/scipy) kernel backend.

Mirror of the compiled backend in ``_kernels.pyx``. The two must stay
bit-identical: shared tables and constants come from ``_common``, and every
float expression here is written as the same left-associated elementwise
chain the compiled loops use.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from . import _common

_STRUCT8 = np.ones((3, 3), dtype=bool)


def median_blur_u8(image: np.ndarray, ksize: int) -> np.ndarray:
    """Square median filter with replicate (nearest) borders."""
    return ndimage.median_filter(image, size=ksize, mode="nearest")


def binary_open3(mask: np.ndarray) -> np.ndarray:
    """3x3 opening; outside the image counts as background."""
    eroded = ndimage.binary_erosion(mask, structure=_STRUCT8, border_value=0)
    return ndimage.binary_dilation(eroded, structure=_STRUCT8, border_value=0)


def binary_close3(mask: np.ndarray) -> np.ndarray:
    """3x3 closing; outside the image counts as background."""
    dilated = ndimage.binary_dilation(mask, structure=_STRUCT8, border_value=0)
    return ndimage.binary_erosion(dilated, structure=_STRUCT8, border_value=0)


def largest_component_bbox(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    """Half-open bbox of the largest 8-connected component.

    Ties break toward the component whose first pixel comes earliest in
    row-major order. None when the mask is empty.
    """
    labels, n = ndimage.label(mask, structure=_STRUCT8)
    if n == 0:
        return None
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n + 1)
    first = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(flat.size, dtype=np.int64))
    counts[0] = -1
    best_area = counts.max()
    candidates = np.flatnonzero(counts == best_area)
    best = candidates[np.argmin(first[candidates])]
    ys, xs = np.nonzero(labels == best)
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def clahe_u8(image: np.ndarray, clip_limit: float, nx: int, ny: int) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization on a grayscale array."""
    h, w = image.shape
    ex = _common.tile_edges(w, nx)
    ey = _common.tile_edges(h, ny)
    tables = np.empty((ny, nx, 256), dtype=np.float64)
    for ty in range(ny):
        for tx in range(nx):
            tile = image[ey[ty] : ey[ty + 1], ex[tx] : ex[tx + 1]]
            hist = np.bincount(tile.ravel(), minlength=256)
            tables[ty, tx] = _common.build_clahe_table(hist.tolist(), tile.size, clip_limit)

    ix0, ix1, wx = _common.axis_interp(w, nx)
    iy0, iy1, wy = _common.axis_interp(h, ny)
    ix0 = np.asarray(ix0)[None, :]
    ix1 = np.asarray(ix1)[None, :]
    wx = np.asarray(wx)[None, :]
    iy0 = np.asarray(iy0)[:, None]
    iy1 = np.asarray(iy1)[:, None]
    wy = np.asarray(wy)[:, None]

    v = image.astype(np.intp)
    t00 = tables[iy0, ix0, v]
    t01 = tables[iy0, ix1, v]
    t10 = tables[iy1, ix0, v]
    t11 = tables[iy1, ix1, v]
    top = (1.0 - wx) * t00 + wx * t01
    bottom = (1.0 - wx) * t10 + wx * t11
    value = (1.0 - wy) * top + wy * bottom
    out = np.floor(value + 0.5)
    return np.clip(out, 0.0, 255.0).astype(np.uint8)


def _gaussian_blur(image_f: np.ndarray) -> np.ndarray:
    k = _common.gaussian5()
    h, w = image_f.shape
    p = np.pad(image_f, 2, mode="edge")
    horiz = (
        k[0] * p[:, 0:w]
        + k[1] * p[:, 1 : w + 1]
        + k[2] * p[:, 2 : w + 2]
        + k[3] * p[:, 3 : w + 3]
        + k[4] * p[:, 4 : w + 4]
    )
    return (
        k[0] * horiz[0:h]
        + k[1] * horiz[1 : h + 1]
        + k[2] * horiz[2 : h + 2]
        + k[3] * horiz[3 : h + 3]
        + k[4] * horiz[4 : h + 4]
    )


def canny_u8(image: np.ndarray, low: float, high: float) -> np.ndarray:
    """Canny edge map: 5-tap Gaussian, Sobel, sector NMS, hysteresis.

    Output is uint8 in {0, 255}; the 1-pixel border is always 0.
    """
    h, w = image.shape
    blurred = _gaussian_blur(image.astype(np.float64))
    p = np.pad(blurred, 1, mode="edge")
    gx = (p[0:h, 2 : w + 2] + 2.0 * p[1 : h + 1, 2 : w + 2] + p[2 : h + 2, 2 : w + 2]) - (
        p[0:h, 0:w] + 2.0 * p[1 : h + 1, 0:w] + p[2 : h + 2, 0:w]
    )
    gy = (p[2 : h + 2, 0:w] + 2.0 * p[2 : h + 2, 1 : w + 1] + p[2 : h + 2, 2 : w + 2]) - (
        p[0:h, 0:w] + 2.0 * p[0:h, 1 : w + 1] + p[0:h, 2 : w + 2]
    )
    mag = np.sqrt(gx * gx + gy * gy)

    keep = np.zeros((h, w), dtype=bool)
    if h > 2 and w > 2:
        m = mag[1:-1, 1:-1]
        cgx = gx[1:-1, 1:-1]
        cgy = gy[1:-1, 1:-1]
        ax = np.abs(cgx)
        ay = np.abs(cgy)
        horizontal = ay <= _common.TAN_LOW * ax
        vertical = ~horizontal & (ay >= _common.TAN_HIGH * ax)
        same_sign = (cgx > 0.0) == (cgy > 0.0)
        diag_main = ~horizontal & ~vertical & same_sign

        west, east = mag[1:-1, :-2], mag[1:-1, 2:]
        north, south = mag[:-2, 1:-1], mag[2:, 1:-1]
        nw, se = mag[:-2, :-2], mag[2:, 2:]
        ne, sw = mag[:-2, 2:], mag[2:, :-2]

        n1 = np.where(horizontal, west, np.where(vertical, north, np.where(diag_main, nw, ne)))
        n2 = np.where(horizontal, east, np.where(vertical, south, np.where(diag_main, se, sw)))
        keep[1:-1, 1:-1] = (m >= n1) & (m >= n2)

    candidates = keep & (mag >= low) & (mag > 0.0)
    strong = candidates & (mag >= high)
    out = np.zeros((h, w), dtype=np.uint8)
    if not strong.any():
        return out
    labels, _ = ndimage.label(candidates, structure=_STRUCT8)
    kept_labels = np.unique(labels[strong])
    out[np.isin(labels, kept_labels)] = 255
    return out
