"""Backend selection for the pixel kernels.

The compiled extension is used when it imports; setting
``BURSTDIFF_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("BURSTDIFF_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl

    BACKEND = "compiled"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def warp_affine(img, mat, backend=None):
    """Resample ``img`` (H, W, C) at source coordinates ``mat @ (x, y, 1)``.

    Bilinear interpolation with symmetric (edge-repeating) reflection outside
    the image. ``mat`` is a 2x3 matrix mapping output pixel coordinates to
    source coordinates; pixel centres sit on integer indices.
    """
    impl = _select(backend)
    img = np.ascontiguousarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"expected (H, W, C) image, got shape {img.shape}")
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    if mat.shape != (2, 3):
        raise ValueError(f"expected 2x3 matrix, got {mat.shape}")
    return impl.warp_affine(img, mat)


def demosaic_bilinear(planes, backend=None):
    """Bilinear demosaic of RGGB planes (4, h, w) into linear RGB (2h, 2w, 3)."""
    impl = _select(backend)
    planes = np.ascontiguousarray(planes, dtype=np.float64)
    if planes.ndim != 3 or planes.shape[0] != 4:
        raise ValueError(f"expected (4, h, w) RGGB planes, got shape {planes.shape}")
    return impl.demosaic_bilinear(planes)


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "compiled":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("compiled")
    except ImportError:
        pass
    return names
