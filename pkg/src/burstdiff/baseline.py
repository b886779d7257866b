"""Initial SR images: bicubic upscaling of the reference frame, or a small
deterministic burst network trained with per-pixel MSE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from torch import nn

from .align import FeatureEncoder, align_features
from .burst import process_reference
from .resample import resize_numpy


class InitSource(str, Enum):
    BASELINE_SR = "baseline_sr"
    BICUBIC = "bicubic"


@dataclass
class InitialSR:
    image: torch.Tensor  # (N, 3, H, W) in [0, 1]
    source: InitSource


def bicubic_init(raw: np.ndarray, scale: int = 4, gamma: float = 2.2, gains=(1.0, 1.0, 1.0),
                 ref_index: int = 0) -> InitialSR:
    """Demosaic + gamma on the reference frame, then bicubic x``scale`` upscaling.

    ``raw`` is one burst (B, 4, h, w) or a batch (N, B, 4, h, w).
    """
    raw = np.asarray(raw)
    single = raw.ndim == 4
    if single:
        raw = raw[None]
    if raw.ndim != 5 or raw.shape[2] != 4:
        raise ValueError(f"expected (N, B, 4, h, w) bursts, got {raw.shape}")
    out = []
    for burst in raw:
        rgb = process_reference(burst, gamma, gains, ref_index)
        h, w = rgb.shape[:2]
        up = np.clip(resize_numpy(rgb, (h * scale, w * scale)), 0.0, 1.0)
        out.append(up.transpose(2, 0, 1))
    return InitialSR(torch.from_numpy(np.stack(out).astype(np.float32)), InitSource.BICUBIC)


class _ResConv(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.body = nn.Sequential(nn.Conv2d(c, c, 3, padding=1), nn.GELU(), nn.Conv2d(c, c, 3, padding=1))

    def forward(self, x):
        return x + self.body(x)


class BaselineSR(nn.Module):
    """Encode frames, align to the reference, average over the burst and
    upsample with sub-pixel convolutions. ``forward`` returns unclamped RGB.
    """

    def __init__(self, burst_size: int = 8, feat_dim: int = 48, blocks: int = 3, scale: int = 8,
                 ref_index: int = 0, search_radius: int = 8):
        super().__init__()
        stages = int(round(math.log2(scale)))
        if 2 ** stages != scale:
            raise ValueError(f"scale must be a power of two, got {scale}")
        self.burst_size = burst_size
        self.ref_index = ref_index
        self.search_radius = search_radius
        self.encoder = FeatureEncoder(4, feat_dim)
        self.body = nn.Sequential(*[_ResConv(feat_dim) for _ in range(blocks)])
        ups = []
        for _ in range(stages):
            ups += [nn.Conv2d(feat_dim, 4 * feat_dim, 3, padding=1), nn.PixelShuffle(2), nn.GELU()]
        self.upsample = nn.Sequential(*ups)
        self.tail = nn.Conv2d(feat_dim, 3, 3, padding=1)

    def forward(self, burst: torch.Tensor) -> torch.Tensor:
        if burst.shape[1] != self.burst_size:
            raise ValueError(f"expected bursts of {self.burst_size} frames, got {burst.shape[1]}")
        feat = self.encoder(burst)
        aligned, _ = align_features(feat, self.ref_index, self.search_radius)
        fused = aligned.mean(dim=1)
        return self.tail(self.upsample(self.body(fused)))


@torch.no_grad()
def baseline_forward(burst: torch.Tensor, model: BaselineSR) -> InitialSR:
    return InitialSR(model(burst).clamp(0.0, 1.0), InitSource.BASELINE_SR)
