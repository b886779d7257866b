"""Pure numpy implementations of the pixel kernels (fallback backend)."""
import numpy as np

_KG = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]])
_KRB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])


def _reflect(i, n):
    period = 2 * n
    i = np.mod(i, period)
    return np.where(i >= n, period - 1 - i, i)


def warp_affine(img, mat):
    img = np.ascontiguousarray(img, dtype=np.float64)
    mat = np.asarray(mat, dtype=np.float64)
    h, w, _ = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = mat[0, 0] * xs + mat[0, 1] * ys + mat[0, 2]
    sy = mat[1, 0] * xs + mat[1, 1] * ys + mat[1, 2]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    gx = 1.0 - fx
    gy = 1.0 - fy
    xi = x0.astype(np.int64)
    yi = y0.astype(np.int64)
    xa, xb = _reflect(xi, w), _reflect(xi + 1, w)
    ya, yb = _reflect(yi, h), _reflect(yi + 1, h)
    return (gy * (gx * img[ya, xa] + fx * img[ya, xb])
            + fy * (gx * img[yb, xa] + fx * img[yb, xb]))


def _cfa_masks(hh, ww):
    ys, xs = np.mgrid[0:hh, 0:ww]
    site = np.where(ys % 2 == 0, np.where(xs % 2 == 0, 0, 1), np.where(xs % 2 == 0, 1, 2))
    return [(site == k).astype(np.float64) for k in range(3)]


def demosaic_bilinear(planes):
    planes = np.asarray(planes, dtype=np.float64)
    _, h, w = planes.shape
    hh, ww = 2 * h, 2 * w
    mos = np.empty((hh, ww))
    mos[0::2, 0::2] = planes[0]
    mos[0::2, 1::2] = planes[1]
    mos[1::2, 0::2] = planes[2]
    mos[1::2, 1::2] = planes[3]
    out = np.empty((hh, ww, 3))
    for k, mask in enumerate(_cfa_masks(hh, ww)):
        kern = _KG if k == 1 else _KRB
        vals = np.pad(mos * mask, 1)
        wts = np.pad(mask, 1)
        num = np.zeros((hh, ww))
        den = np.zeros((hh, ww))
        # same accumulation order as the compiled loop
        for dy in range(3):
            for dx in range(3):
                if kern[dy, dx] == 0.0:
                    continue
                m = wts[dy:dy + hh, dx:dx + ww]
                num = num + np.where(m > 0, kern[dy, dx] * vals[dy:dy + hh, dx:dx + ww], 0.0)
                den = den + kern[dy, dx] * m
        out[..., k] = num / den
    return out
