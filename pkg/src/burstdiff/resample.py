"""Separable Catmull-Rom bicubic resampling expressed as linear operators.

Resizing (.., H, W) -> (.., H', W') is ``Wy @ x @ Wx.T`` with the
interpolation matrices below, so it is exact, differentiable under torch and
reusable for numpy images.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import torch

CATMULL_ROM_A = -0.5


def cubic_kernel(x, a: float = CATMULL_ROM_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=64)
def _matrix(n_in: int, n_out: int, a: float) -> np.ndarray:
    if n_in < 1 or n_out < 1:
        raise ValueError(f"degenerate resize {n_in} -> {n_out}")
    scale = n_in / n_out
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        # half-pixel centres
        src = (i + 0.5) * scale - 0.5
        base = int(np.floor(src))
        frac = src - base
        for k in range(-1, 3):
            w = float(cubic_kernel(k - frac, a))
            if w == 0.0:
                continue
            j = min(max(base + k, 0), n_in - 1)
            mat[i, j] += w
    mat.setflags(write=False)
    return mat


def bicubic_matrix(n_in: int, n_out: int, a: float = CATMULL_ROM_A) -> np.ndarray:
    """(n_out, n_in) interpolation matrix; rows sum to one."""
    return _matrix(int(n_in), int(n_out), float(a))


def resize_torch(x: torch.Tensor, size) -> torch.Tensor:
    """Bicubic resize of the last two dims of ``x`` to ``size = (H', W')``."""
    h, w = x.shape[-2:]
    oh, ow = size
    if (oh, ow) == (h, w):
        return x
    my = torch.tensor(bicubic_matrix(h, oh), dtype=x.dtype, device=x.device)
    mx = torch.tensor(bicubic_matrix(w, ow), dtype=x.dtype, device=x.device)
    return torch.matmul(torch.matmul(my, x), mx.transpose(0, 1))


def resize_numpy(img: np.ndarray, size) -> np.ndarray:
    """Bicubic resize of an (H, W, C) array."""
    h, w = img.shape[:2]
    oh, ow = size
    my, mx = bicubic_matrix(h, oh), bicubic_matrix(w, ow)
    return np.einsum("ij,jkc,lk->ilc", my, np.asarray(img, dtype=np.float64), mx)
