# cython: language_level=3
"""Compiled kernel backend.

Bit-identical mirror of ``_kernels_py``: shared tables and constants come
from ``_common``, and every float expression repeats the fallback's
left-associated chain. Do not "optimize" expression order here without
changing the fallback in lockstep.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt

from . import _common

cnp.import_array()


cdef inline int _clamp(int v, int lo, int hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef inline int _hist_median(int* hist, int* coarse, int rank) nogil:
    cdef int acc = 0
    cdef int c, i, base
    for c in range(16):
        if acc + coarse[c] > rank:
            base = c << 4
            for i in range(base, base + 16):
                acc += hist[i]
                if acc > rank:
                    return i
        acc += coarse[c]
    return 255


def median_blur_u8(image, int ksize):
    """Square median filter with replicate borders (two-level histogram)."""
    cdef cnp.uint8_t[:, ::1] img = np.ascontiguousarray(image, dtype=np.uint8)
    cdef int h = img.shape[0]
    cdef int w = img.shape[1]
    cdef int r = ksize // 2
    cdef int rank = (ksize * ksize) // 2
    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef int hist[256]
    cdef int coarse[16]
    cdef int y, x, i, j, yy, xx
    cdef unsigned char v
    with nogil:
        for y in range(h):
            for i in range(256):
                hist[i] = 0
            for i in range(16):
                coarse[i] = 0
            for j in range(-r, r + 1):
                yy = _clamp(y + j, 0, h - 1)
                for i in range(-r, r + 1):
                    xx = _clamp(i, 0, w - 1)
                    v = img[yy, xx]
                    hist[v] += 1
                    coarse[v >> 4] += 1
            out[y, 0] = <unsigned char>_hist_median(hist, coarse, rank)
            for x in range(1, w):
                xx = _clamp(x - 1 - r, 0, w - 1)
                for j in range(-r, r + 1):
                    yy = _clamp(y + j, 0, h - 1)
                    v = img[yy, xx]
                    hist[v] -= 1
                    coarse[v >> 4] -= 1
                xx = _clamp(x + r, 0, w - 1)
                for j in range(-r, r + 1):
                    yy = _clamp(y + j, 0, h - 1)
                    v = img[yy, xx]
                    hist[v] += 1
                    coarse[v >> 4] += 1
                out[y, x] = <unsigned char>_hist_median(hist, coarse, rank)
    return out_arr


cdef void _erode3(cnp.uint8_t[:, ::1] src, cnp.uint8_t[:, ::1] dst) nogil:
    cdef int h = src.shape[0]
    cdef int w = src.shape[1]
    cdef int y, x, dy, dx, yy, xx
    cdef bint ok
    for y in range(h):
        for x in range(w):
            ok = True
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    yy = y + dy
                    xx = x + dx
                    if yy < 0 or yy >= h or xx < 0 or xx >= w or src[yy, xx] == 0:
                        ok = False
            dst[y, x] = 1 if ok else 0


cdef void _dilate3(cnp.uint8_t[:, ::1] src, cnp.uint8_t[:, ::1] dst) nogil:
    cdef int h = src.shape[0]
    cdef int w = src.shape[1]
    cdef int y, x, dy, dx, yy, xx
    cdef bint hit
    for y in range(h):
        for x in range(w):
            hit = False
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    yy = y + dy
                    xx = x + dx
                    if 0 <= yy < h and 0 <= xx < w and src[yy, xx] != 0:
                        hit = True
            dst[y, x] = 1 if hit else 0


def binary_open3(mask):
    """3x3 opening; outside the image counts as background."""
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    tmp_arr = np.empty((m.shape[0], m.shape[1]), dtype=np.uint8)
    out_arr = np.empty_like(tmp_arr)
    cdef cnp.uint8_t[:, ::1] tmp = tmp_arr
    cdef cnp.uint8_t[:, ::1] out = out_arr
    with nogil:
        _erode3(m, tmp)
        _dilate3(tmp, out)
    return out_arr.astype(bool)


def binary_close3(mask):
    """3x3 closing; outside the image counts as background."""
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    tmp_arr = np.empty((m.shape[0], m.shape[1]), dtype=np.uint8)
    out_arr = np.empty_like(tmp_arr)
    cdef cnp.uint8_t[:, ::1] tmp = tmp_arr
    cdef cnp.uint8_t[:, ::1] out = out_arr
    with nogil:
        _dilate3(m, tmp)
        _erode3(tmp, out)
    return out_arr.astype(bool)


def largest_component_bbox(mask):
    """Half-open bbox of the largest 8-connected component (earliest-pixel tie)."""
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef int h = m.shape[0]
    cdef int w = m.shape[1]
    seen_arr = np.zeros((h, w), dtype=np.uint8)
    qy_arr = np.empty(h * w, dtype=np.int32)
    qx_arr = np.empty(h * w, dtype=np.int32)
    cdef cnp.uint8_t[:, ::1] seen = seen_arr
    cdef cnp.int32_t[::1] qy = qy_arr
    cdef cnp.int32_t[::1] qx = qx_arr
    cdef int y, x, cy, cx, ny, nx, dy, dx, head, tail
    cdef long area, best_area = 0
    cdef int x0 = 0, y0 = 0, x1 = 0, y1 = 0
    cdef int bx0 = 0, by0 = 0, bx1 = 0, by1 = 0
    with nogil:
        for y in range(h):
            for x in range(w):
                if m[y, x] == 0 or seen[y, x] != 0:
                    continue
                head = 0
                tail = 0
                qy[tail] = y
                qx[tail] = x
                tail += 1
                seen[y, x] = 1
                area = 0
                x0 = x
                x1 = x
                y0 = y
                y1 = y
                while head < tail:
                    cy = qy[head]
                    cx = qx[head]
                    head += 1
                    area += 1
                    if cx < x0: x0 = cx
                    if cx > x1: x1 = cx
                    if cy < y0: y0 = cy
                    if cy > y1: y1 = cy
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            ny = cy + dy
                            nx = cx + dx
                            if 0 <= ny < h and 0 <= nx < w and m[ny, nx] != 0 and seen[ny, nx] == 0:
                                seen[ny, nx] = 1
                                qy[tail] = ny
                                qx[tail] = nx
                                tail += 1
                # scan order makes the seed the earliest pixel, so strictly
                # greater area is exactly the earliest-pixel tie rule
                if area > best_area:
                    best_area = area
                    bx0 = x0
                    by0 = y0
                    bx1 = x1
                    by1 = y1
    if best_area == 0:
        return None
    return (bx0, by0, bx1 + 1, by1 + 1)


def clahe_u8(image, double clip_limit, int nx, int ny):
    """Contrast-limited adaptive histogram equalization on a grayscale array."""
    cdef cnp.uint8_t[:, ::1] img = np.ascontiguousarray(image, dtype=np.uint8)
    cdef int h = img.shape[0]
    cdef int w = img.shape[1]
    ex = _common.tile_edges(w, nx)
    ey = _common.tile_edges(h, ny)
    tables_arr = np.empty((ny, nx, 256), dtype=np.float64)
    cdef int ty, tx, y, x, i
    cdef int ys, yeod, xs, xe
    cdef int thist[256]
    for ty in range(ny):
        for tx in range(nx):
            ys = ey[ty]
            yeod = ey[ty + 1]
            xs = ex[tx]
            xe = ex[tx + 1]
            for i in range(256):
                thist[i] = 0
            with nogil:
                for y in range(ys, yeod):
                    for x in range(xs, xe):
                        thist[img[y, x]] += 1
            tables_arr[ty, tx] = _common.build_clahe_table(
                [thist[i] for i in range(256)], (yeod - ys) * (xe - xs), clip_limit
            )

    ix0_l, ix1_l, wx_l = _common.axis_interp(w, nx)
    iy0_l, iy1_l, wy_l = _common.axis_interp(h, ny)
    cdef cnp.int32_t[::1] ix0 = np.asarray(ix0_l, dtype=np.int32)
    cdef cnp.int32_t[::1] ix1 = np.asarray(ix1_l, dtype=np.int32)
    cdef double[::1] wx = np.asarray(wx_l, dtype=np.float64)
    cdef cnp.int32_t[::1] iy0 = np.asarray(iy0_l, dtype=np.int32)
    cdef cnp.int32_t[::1] iy1 = np.asarray(iy1_l, dtype=np.int32)
    cdef double[::1] wy = np.asarray(wy_l, dtype=np.float64)
    cdef double[:, :, ::1] T = tables_arr

    out_arr = np.empty((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef int v, r0, r1, c0, c1
    cdef double wxv, wyv, top, bottom, value, f
    with nogil:
        for y in range(h):
            r0 = iy0[y]
            r1 = iy1[y]
            wyv = wy[y]
            for x in range(w):
                v = img[y, x]
                c0 = ix0[x]
                c1 = ix1[x]
                wxv = wx[x]
                top = (1.0 - wxv) * T[r0, c0, v] + wxv * T[r0, c1, v]
                bottom = (1.0 - wxv) * T[r1, c0, v] + wxv * T[r1, c1, v]
                value = (1.0 - wyv) * top + wyv * bottom
                f = floor(value + 0.5)
                if f < 0.0:
                    f = 0.0
                elif f > 255.0:
                    f = 255.0
                out[y, x] = <unsigned char>f
    return out_arr


def canny_u8(image, double low, double high):
    """Canny edge map: 5-tap Gaussian, Sobel, sector NMS, hysteresis."""
    cdef int h = image.shape[0]
    cdef int w = image.shape[1]
    k5 = _common.gaussian5()
    cdef double k0 = k5[0]
    cdef double k1 = k5[1]
    cdef double k2 = k5[2]
    cdef double k3 = k5[3]
    cdef double k4 = k5[4]
    cdef double tan_low = _common.TAN_LOW
    cdef double tan_high = _common.TAN_HIGH

    # padding at the numpy level keeps input bits identical to the fallback
    p_arr = np.pad(np.ascontiguousarray(image).astype(np.float64), 2, mode="edge")
    cdef double[:, ::1] p = p_arr
    horiz_arr = np.empty((h + 4, w), dtype=np.float64)
    cdef double[:, ::1] horiz = horiz_arr
    blur_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] blur = blur_arr
    cdef int y, x
    with nogil:
        for y in range(h + 4):
            for x in range(w):
                horiz[y, x] = (
                    k0 * p[y, x]
                    + k1 * p[y, x + 1]
                    + k2 * p[y, x + 2]
                    + k3 * p[y, x + 3]
                    + k4 * p[y, x + 4]
                )
        for y in range(h):
            for x in range(w):
                blur[y, x] = (
                    k0 * horiz[y, x]
                    + k1 * horiz[y + 1, x]
                    + k2 * horiz[y + 2, x]
                    + k3 * horiz[y + 3, x]
                    + k4 * horiz[y + 4, x]
                )

    pb_arr = np.pad(blur_arr, 1, mode="edge")
    cdef double[:, ::1] pb = pb_arr
    gx_arr = np.empty((h, w), dtype=np.float64)
    gy_arr = np.empty((h, w), dtype=np.float64)
    mag_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gy = gy_arr
    cdef double[:, ::1] mag = mag_arr
    cdef double gxv, gyv
    with nogil:
        for y in range(h):
            for x in range(w):
                gxv = (pb[y, x + 2] + 2.0 * pb[y + 1, x + 2] + pb[y + 2, x + 2]) - (
                    pb[y, x] + 2.0 * pb[y + 1, x] + pb[y + 2, x]
                )
                gyv = (pb[y + 2, x] + 2.0 * pb[y + 2, x + 1] + pb[y + 2, x + 2]) - (
                    pb[y, x] + 2.0 * pb[y, x + 1] + pb[y, x + 2]
                )
                gx[y, x] = gxv
                gy[y, x] = gyv
                mag[y, x] = sqrt(gxv * gxv + gyv * gyv)

    cand_arr = np.zeros((h, w), dtype=np.uint8)
    strong_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] cand = cand_arr
    cdef cnp.uint8_t[:, ::1] strong = strong_arr
    cdef double m, ax, ay, n1, n2
    cdef bint keep
    with nogil:
        for y in range(1, h - 1):
            for x in range(1, w - 1):
                gxv = gx[y, x]
                gyv = gy[y, x]
                m = mag[y, x]
                ax = gxv if gxv >= 0.0 else -gxv
                ay = gyv if gyv >= 0.0 else -gyv
                if ay <= tan_low * ax:
                    n1 = mag[y, x - 1]
                    n2 = mag[y, x + 1]
                elif ay >= tan_high * ax:
                    n1 = mag[y - 1, x]
                    n2 = mag[y + 1, x]
                elif (gxv > 0.0) == (gyv > 0.0):
                    n1 = mag[y - 1, x - 1]
                    n2 = mag[y + 1, x + 1]
                else:
                    n1 = mag[y - 1, x + 1]
                    n2 = mag[y + 1, x - 1]
                keep = m >= n1 and m >= n2
                if keep and m >= low and m > 0.0:
                    cand[y, x] = 1
                    if m >= high:
                        strong[y, x] = 1

    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    qy_arr = np.empty(h * w, dtype=np.int32)
    qx_arr = np.empty(h * w, dtype=np.int32)
    cdef cnp.int32_t[::1] qy = qy_arr
    cdef cnp.int32_t[::1] qx = qx_arr
    cdef int head, tail, cy, cx, ny_, nx_, dy, dx
    with nogil:
        for y in range(h):
            for x in range(w):
                if strong[y, x] == 0 or out[y, x] != 0:
                    continue
                head = 0
                tail = 0
                qy[tail] = y
                qx[tail] = x
                tail += 1
                out[y, x] = 255
                while head < tail:
                    cy = qy[head]
                    cx = qx[head]
                    head += 1
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            ny_ = cy + dy
                            nx_ = cx + dx
                            if (
                                0 <= ny_ < h
                                and 0 <= nx_ < w
                                and cand[ny_, nx_] != 0
                                and out[ny_, nx_] == 0
                            ):
                                out[ny_, nx_] = 255
                                qy[tail] = ny_
                                qx[tail] = nx_
                                tail += 1
    return out_arr
