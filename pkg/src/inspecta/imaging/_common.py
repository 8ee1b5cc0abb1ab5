"""Exact shared helpers used by both kernel backends.

Everything here is computed in pure Python (integer histograms, float tables,
geometry) so the compiled and fallback backends consume bit-identical
constants and mapping tables. Keeping this logic in one place is what makes
backend parity exact rather than approximate.
"""

from __future__ import annotations

import math

from .types import ImagingError

GAUSS_SIGMA = 1.4
# non-maximum suppression sector boundaries at 22.5 and 67.5 degrees
TAN_LOW = math.tan(math.pi / 8.0)
TAN_HIGH = math.tan(3.0 * math.pi / 8.0)


def gaussian5() -> tuple[float, ...]:
    """Normalized 5-tap Gaussian (sigma 1.4) used by the edge detector."""
    raw = [math.exp(-((i - 2) ** 2) / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)) for i in range(5)]
    total = sum(raw)
    return tuple(v / total for v in raw)


def otsu_threshold(hist) -> int:
    """Between-class-variance-maximizing threshold over a 256-bin histogram.

    Exact integer arithmetic (cross-multiplied comparison), so there is no
    float drift; ties resolve to the smallest threshold. Bin t goes to the
    lower class, i.e. the foreground test is ``value > t``.
    """
    hist = list(hist)
    if len(hist) != 256:
        raise ImagingError(f"histogram must have 256 bins, got {len(hist)}")
    if any(h < 0 for h in hist):
        raise ImagingError("histogram counts must be non-negative")
    total = sum(hist)
    if total == 0:
        raise ImagingError("histogram is empty")
    weighted_total = sum(i * h for i, h in enumerate(hist))

    best_t = 0
    best_num = -1
    best_den = 1
    count0 = 0
    sum0 = 0
    for t in range(256):
        count0 += hist[t]
        sum0 += t * hist[t]
        count1 = total - count0
        if count0 == 0 or count1 == 0:
            num, den = 0, 1
        else:
            spread = sum0 * count1 - (weighted_total - sum0) * count0
            num = spread * spread
            den = count0 * count1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def tile_edges(size: int, tiles: int) -> list[int]:
    """Tile boundaries along one axis: edge i at floor(i * size / tiles)."""
    if tiles < 1:
        raise ImagingError(f"tile count must be >= 1, got {tiles}")
    if tiles > size:
        raise ImagingError(f"tile count {tiles} exceeds axis size {size}")
    return [(i * size) // tiles for i in range(tiles + 1)]


def axis_interp(size: int, tiles: int) -> tuple[list[int], list[int], list[float]]:
    """Per-pixel bilinear lookup along one axis.

    Returns (lower tile index, upper tile index, weight toward upper) for each
    coordinate. Pixels outside the outermost tile centers clamp to the edge
    tile with weight 0.
    """
    edges = tile_edges(size, tiles)
    centers = [(edges[i] + edges[i + 1] - 1) / 2.0 for i in range(tiles)]
    idx0: list[int] = []
    idx1: list[int] = []
    weight: list[float] = []
    hi = 0
    for x in range(size):
        if x <= centers[0]:
            idx0.append(0)
            idx1.append(0)
            weight.append(0.0)
        elif x >= centers[-1]:
            idx0.append(tiles - 1)
            idx1.append(tiles - 1)
            weight.append(0.0)
        else:
            while not (centers[hi] <= x < centers[hi + 1]):
                hi += 1
            idx0.append(hi)
            idx1.append(hi + 1)
            weight.append((x - centers[hi]) / (centers[hi + 1] - centers[hi]))
    return idx0, idx1, weight


def build_clahe_table(hist, n_pixels: int, clip_limit: float) -> list[float]:
    """Contrast-limited equalization mapping for one tile.

    Clips each bin at clip_limit * n_pixels / 256, redistributes the clipped
    excess uniformly in a single pass, then maps bin v to
    255 * cdf(v) / n_pixels. The caller rounds half-up after interpolation.
    """
    hist = list(hist)
    if len(hist) != 256:
        raise ImagingError(f"histogram must have 256 bins, got {len(hist)}")
    if n_pixels <= 0:
        raise ImagingError("tile has no pixels")
    if math.isinf(clip_limit):
        values = [float(h) for h in hist]
    else:
        if clip_limit < 1.0:
            raise ImagingError(f"clip limit must be >= 1, got {clip_limit}")
        limit = clip_limit * n_pixels / 256.0
        excess = 0.0
        values = []
        for h in hist:
            if h > limit:
                excess += h - limit
                values.append(limit)
            else:
                values.append(float(h))
        bonus = excess / 256.0
        values = [v + bonus for v in values]
    table = []
    cdf = 0.0
    for v in values:
        cdf += v
        table.append(255.0 * cdf / n_pixels)
    return table
