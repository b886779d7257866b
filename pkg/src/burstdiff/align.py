"""Per-frame burst features, shift alignment to the reference frame and the
multi-scale conditioning pyramid consumed by the denoiser.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

from .resample import resize_torch


class FeatureEncoder(nn.Module):
    """Shallow convolutional encoder applied to every frame independently."""

    def __init__(self, in_channels: int = 4, feat_dim: int = 48):
        super().__init__()
        self.feat_dim = feat_dim
        self.head = nn.Conv2d(in_channels, feat_dim, 3, padding=1)
        self.body = nn.Sequential(
            nn.GELU(),
            nn.Conv2d(feat_dim, feat_dim, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(feat_dim, feat_dim, 3, padding=1),
        )

    def forward(self, burst: torch.Tensor) -> torch.Tensor:
        if burst.ndim != 5:
            raise ValueError(f"expected (N, B, C, h, w) burst, got {tuple(burst.shape)}")
        n, b = burst.shape[:2]
        if burst.shape[2] != self.head.in_channels:
            raise ValueError(f"encoder expects {self.head.in_channels} planes, got {burst.shape[2]}")
        x = burst.flatten(0, 1)
        f = self.head(x)
        f = f + self.body(f)
        return f.view(n, b, self.feat_dim, *f.shape[-2:])


def extract_features(burst: torch.Tensor, encoder: FeatureEncoder) -> torch.Tensor:
    return encoder(burst)


def correlation_scores(ref: np.ndarray, frame: np.ndarray, radius: int) -> np.ndarray:
    """Circular cross-correlation ``sum_p ref(p) * frame(p + d)`` on a window.

    Inputs are (C, h, w); the result is indexed ``[dy + ry, dx + rx]``.
    """
    _, h, w = ref.shape
    ry, rx = min(radius, (h - 1) // 2), min(radius, (w - 1) // 2)
    spec = np.conj(np.fft.rfft2(ref)) * np.fft.rfft2(frame)
    corr = np.fft.irfft2(spec.sum(axis=0), s=(h, w))
    dys = np.arange(-ry, ry + 1) % h
    dxs = np.arange(-rx, rx + 1) % w
    return corr[np.ix_(dys, dxs)]


def best_shift(scores: np.ndarray, rtol: float = 1e-9) -> tuple[int, int]:
    """Argmax of a centred score window; near-ties go to the smallest shift."""
    ry, rx = scores.shape[0] // 2, scores.shape[1] // 2
    top = scores.max()
    cand = np.argwhere(scores >= top - rtol * max(abs(top), 1e-300))
    shifts = [(int(i) - ry, int(j) - rx) for i, j in cand]
    return min(shifts, key=lambda d: (abs(d[0]) + abs(d[1]), abs(d[0]), d))


def estimate_shifts(feat: torch.Tensor, ref_index: int = 0, radius: int = 8) -> np.ndarray:
    """Integer (dy, dx) per frame maximizing correlation with the reference."""
    arr = feat.detach().to("cpu", torch.float64).numpy()
    n, b = arr.shape[:2]
    shifts = np.zeros((n, b, 2), dtype=np.int64)
    for i in range(n):
        ref = arr[i, ref_index]
        for j in range(b):
            if j != ref_index:
                shifts[i, j] = best_shift(correlation_scores(ref, arr[i, j], radius))
    return shifts


def align_features(feat: torch.Tensor, ref_index: int = 0, radius: int = 8):
    """Translate every non-reference frame onto the reference frame.

    Returns the aligned (N, B, f, h, w) features and the (N, B, 2) shifts.
    """
    if feat.ndim != 5:
        raise ValueError(f"expected (N, B, f, h, w) features, got {tuple(feat.shape)}")
    if not 0 <= ref_index < feat.shape[1]:
        raise ValueError(f"reference index {ref_index} outside burst of {feat.shape[1]}")
    shifts = estimate_shifts(feat, ref_index, radius)
    rows = []
    for i in range(feat.shape[0]):
        frames = []
        for j in range(feat.shape[1]):
            dy, dx = (int(v) for v in shifts[i, j])
            if j == ref_index or (dy, dx) == (0, 0):
                frames.append(feat[i, j])
            else:
                frames.append(torch.roll(feat[i, j], shifts=(-dy, -dx), dims=(-2, -1)))
        rows.append(torch.stack(frames))
    return torch.stack(rows), shifts


def build_condition_pyramid(feat: torch.Tensor, levels: Sequence[tuple[int, int]],
                            merges: Sequence[nn.Conv2d], reorder: bool = True) -> list[torch.Tensor]:
    """Rescale aligned features to every level, merge B*f channels with a 1x1 conv.

    The 1x1 merge and the bicubic resize are both linear and the resize rows
    sum to one, so merging before resizing gives the same maps at a fraction
    of the memory; ``reorder=False`` runs the literal resize-then-merge order.
    """
    if not levels:
        raise ValueError("need at least one pyramid level")
    if len(merges) != len(levels):
        raise ValueError(f"{len(merges)} merge layers for {len(levels)} levels")
    n, b, f, h, w = feat.shape
    flat = feat.reshape(n, b * f, h, w)
    out = []
    for (lh, lw), merge in zip(levels, merges):
        if lh < 1 or lw < 1:
            raise ValueError(f"degenerate level size {(lh, lw)}")
        if merge.in_channels != b * f:
            raise ValueError(f"merge expects {merge.in_channels} channels, got {b * f}")
        if reorder:
            out.append(resize_torch(merge(flat), (lh, lw)))
        else:
            out.append(merge(resize_torch(flat, (lh, lw))))
    return out


class BurstConditioner(nn.Module):
    """Encoder + alignment + per-level merge producing the conditioning maps."""

    def __init__(self, levels: Sequence[tuple[int, int]], burst_size: int = 8, feat_dim: int = 48,
                 cond_channels: int = 256, ref_index: int = 0, search_radius: int = 8):
        super().__init__()
        self.levels = [tuple(int(v) for v in lv) for lv in levels]
        self.burst_size = burst_size
        self.ref_index = ref_index
        self.search_radius = search_radius
        self.cond_channels = cond_channels
        self.encoder = FeatureEncoder(4, feat_dim)
        self.merges = nn.ModuleList(
            nn.Conv2d(burst_size * feat_dim, cond_channels, 1) for _ in self.levels
        )

    def aligned_features(self, burst: torch.Tensor) -> torch.Tensor:
        if burst.shape[1] != self.burst_size:
            raise ValueError(f"expected bursts of {self.burst_size} frames, got {burst.shape[1]}")
        feat = extract_features(burst, self.encoder)
        aligned, _ = align_features(feat, self.ref_index, self.search_radius)
        return aligned

    def forward(self, burst: torch.Tensor) -> list[torch.Tensor]:
        return build_condition_pyramid(self.aligned_features(burst), self.levels, self.merges)
