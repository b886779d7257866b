"""Compiled pixel kernels for burst synthesis and demosaicing.

Mirrors ``_pykernels`` operation-for-operation; results agree to rounding.
"""
import numpy as np

from libc.math cimport floor


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t period = 2 * n
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - 1 - i
    return i


def warp_affine(const double[:, :, ::1] img, const double[:, ::1] mat):
    """Bilinear resampling ``out[y, x] = img(mat @ (x, y, 1))``, symmetric borders."""
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t c = img.shape[2]
    out = np.empty((h, w, c), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t y, x, k, xa, xb, ya, yb, xi, yi
    cdef double sx, sy, x0, y0, fx, fy, gx, gy
    cdef double m00 = mat[0, 0], m01 = mat[0, 1], m02 = mat[0, 2]
    cdef double m10 = mat[1, 0], m11 = mat[1, 1], m12 = mat[1, 2]
    with nogil:
        for y in range(h):
            for x in range(w):
                sx = m00 * x + m01 * y + m02
                sy = m10 * x + m11 * y + m12
                x0 = floor(sx)
                y0 = floor(sy)
                fx = sx - x0
                fy = sy - y0
                gx = 1.0 - fx
                gy = 1.0 - fy
                xi = <Py_ssize_t>x0
                yi = <Py_ssize_t>y0
                xa = _reflect(xi, w)
                xb = _reflect(xi + 1, w)
                ya = _reflect(yi, h)
                yb = _reflect(yi + 1, h)
                for k in range(c):
                    o[y, x, k] = (gy * (gx * img[ya, xa, k] + fx * img[ya, xb, k])
                                  + fy * (gx * img[yb, xa, k] + fx * img[yb, xb, k]))
    return out


cdef double[3][3] _KG = [[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]]
cdef double[3][3] _KRB = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]


cdef inline int _site(Py_ssize_t y, Py_ssize_t x) noexcept nogil:
    # 0 = R, 1 = G, 2 = B on an RGGB lattice
    if y % 2 == 0:
        return 0 if x % 2 == 0 else 1
    return 1 if x % 2 == 0 else 2


def demosaic_bilinear(const double[:, :, ::1] planes):
    """Normalized-convolution bilinear demosaic of (4, h, w) RGGB planes to (2h, 2w, 3)."""
    cdef Py_ssize_t h = planes.shape[1]
    cdef Py_ssize_t w = planes.shape[2]
    cdef Py_ssize_t hh = 2 * h, ww = 2 * w
    mos_arr = np.empty((hh, ww), dtype=np.float64)
    cdef double[:, ::1] mos = mos_arr
    out = np.empty((hh, ww, 3), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t y, x, dy, dx, yy, xx
    cdef int k, s
    cdef double num, den, wgt
    with nogil:
        for y in range(h):
            for x in range(w):
                mos[2 * y, 2 * x] = planes[0, y, x]
                mos[2 * y, 2 * x + 1] = planes[1, y, x]
                mos[2 * y + 1, 2 * x] = planes[2, y, x]
                mos[2 * y + 1, 2 * x + 1] = planes[3, y, x]
        for k in range(3):
            for y in range(hh):
                for x in range(ww):
                    num = 0.0
                    den = 0.0
                    for dy in range(3):
                        yy = y + dy - 1
                        if yy < 0 or yy >= hh:
                            continue
                        for dx in range(3):
                            xx = x + dx - 1
                            if xx < 0 or xx >= ww:
                                continue
                            s = _site(yy, xx)
                            if s != k:
                                continue
                            wgt = _KG[dy][dx] if k == 1 else _KRB[dy][dx]
                            num = num + wgt * mos[yy, xx]
                            den = den + wgt
                    o[y, x, k] = num / den
    return out
