"""U-Net noise predictor with timestep embedding and SFT conditioning."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class DenoiserConfig:
    widths: tuple = (32, 64, 128)
    temb_dim: int = 128
    in_channels: int = 3
    out_channels: int = 3
    cond_channels: int = 256
    image_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("the U-Net needs at least two levels")
        if min(self.widths) < 1 or self.temb_dim < 1:
            raise ValueError("widths and embedding size must be positive")
        if self.image_size % (2 ** (len(self.widths) - 1)):
            raise ValueError(f"image size {self.image_size} not divisible by 2^{len(self.widths) - 1}")

    @property
    def n_levels(self) -> int:
        return len(self.widths)

    @property
    def level_sizes(self) -> list[tuple[int, int]]:
        return [(self.image_size >> l, self.image_size >> l) for l in range(self.n_levels)]


def _groups(c: int) -> int:
    return math.gcd(c, 8)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer steps, shape (N, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class SFT(nn.Module):
    """F' = (1 + scale(M)) * F + shift(M), with two independent 1x1 convs."""

    def __init__(self, cond_channels: int, channels: int):
        super().__init__()
        self.scale = nn.Conv2d(cond_channels, channels, 1)
        self.shift = nn.Conv2d(cond_channels, channels, 1)

    def forward(self, feat: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return sft(feat, cond, self)


def sft(feat: torch.Tensor, cond: torch.Tensor, params: SFT) -> torch.Tensor:
    if feat.shape[-2:] != cond.shape[-2:]:
        raise ValueError(f"feature map {tuple(feat.shape[-2:])} and condition {tuple(cond.shape[-2:])} differ")
    return (1 + params.scale(cond)) * feat + params.shift(cond)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb = nn.Linear(temb_dim, c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class _Stage(nn.Module):
    def __init__(self, c_in, c_out, temb_dim, cond_channels):
        super().__init__()
        self.res1 = ResBlock(c_in, c_out, temb_dim)
        self.sft = SFT(cond_channels, c_out)
        self.res2 = ResBlock(c_out, c_out, temb_dim)

    def forward(self, h, emb, cond):
        return self.res2(self.sft(self.res1(h, emb), cond), emb)


class Denoiser(nn.Module):
    """Predicts the injected noise from (x_t, t, conditioning pyramid).

    Every resolution level is conditioned once on the way down and once on
    the way up; the bottleneck reuses the coarsest map.
    """

    def __init__(self, cfg: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths
        self.time_mlp = nn.Sequential(
            nn.Linear(w[0], cfg.temb_dim), nn.SiLU(), nn.Linear(cfg.temb_dim, cfg.temb_dim)
        )
        self.inp = nn.Conv2d(cfg.in_channels, w[0], 3, padding=1)
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        c = w[0]
        for l, width in enumerate(w):
            self.down.append(_Stage(c, width, cfg.temb_dim, cfg.cond_channels))
            c = width
            if l < len(w) - 1:
                self.downsample.append(nn.Conv2d(width, width, 3, stride=2, padding=1))
        self.mid = _Stage(c, c, cfg.temb_dim, cfg.cond_channels)
        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for l in reversed(range(len(w))):
            self.up.append(_Stage(2 * w[l], w[l], cfg.temb_dim, cfg.cond_channels))
            if l > 0:
                self.upsample.append(nn.Conv2d(w[l], w[l - 1], 3, padding=1))
        self.out_norm = nn.GroupNorm(_groups(w[0]), w[0])
        self.out = nn.Conv2d(w[0], cfg.out_channels, 3, padding=1)

    def check_condition(self, x: torch.Tensor, cond: Sequence[torch.Tensor]) -> None:
        if len(cond) != self.cfg.n_levels:
            raise ValueError(f"expected {self.cfg.n_levels} conditioning maps, got {len(cond)}")
        for l, m in enumerate(cond):
            size = (x.shape[-2] >> l, x.shape[-1] >> l)
            if m.shape[1] != self.cfg.cond_channels or tuple(m.shape[-2:]) != size:
                raise ValueError(f"level {l}: condition {tuple(m.shape[1:])} does not match "
                                 f"({self.cfg.cond_channels}, {size[0]}, {size[1]})")

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: Sequence[torch.Tensor]) -> torch.Tensor:
        self.check_condition(x, cond)
        if t.ndim == 0:
            t = t.expand(x.shape[0])
        emb = self.time_mlp(timestep_embedding(t, self.cfg.widths[0]).to(x.dtype))
        h = self.inp(x)
        skips = []
        n = self.cfg.n_levels
        for l in range(n):
            h = self.down[l](h, emb, cond[l])
            skips.append(h)
            if l < n - 1:
                h = self.downsample[l](h)
        h = self.mid(h, emb, cond[n - 1])
        for i, l in enumerate(reversed(range(n))):
            h = self.up[i](torch.cat([h, skips[l]], dim=1), emb, cond[l])
            if l > 0:
                h = self.upsample[i](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.out(F.silu(self.out_norm(h)))

    def sft_layers(self) -> list[SFT]:
        return [m for m in self.modules() if isinstance(m, SFT)]


def predict_noise(model: Denoiser, x_t: torch.Tensor, t, cond: Sequence[torch.Tensor]) -> torch.Tensor:
    if not isinstance(t, torch.Tensor):
        t = torch.full((x_t.shape[0],), int(t), dtype=torch.long)
    return model(x_t, t, cond)
