"""The burst-conditioned noise predictor used for training and sampling."""
from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .align import BurstConditioner
from .denoiser import Denoiser, DenoiserConfig


class ConditionedDenoiser(nn.Module):
    """Bundles the conditioning front end with the U-Net.

    ``condition`` maps a RAW burst to the pyramid once per sample; ``forward``
    has the ``(x_t, t, cond)`` signature expected by the diffusion routines.
    """

    def __init__(self, denoiser_cfg: DenoiserConfig = DenoiserConfig(), burst_size: int = 8,
                 feat_dim: int = 48, ref_index: int = 0, search_radius: int = 8):
        super().__init__()
        self.denoiser = Denoiser(denoiser_cfg)
        self.conditioner = BurstConditioner(
            denoiser_cfg.level_sizes, burst_size=burst_size, feat_dim=feat_dim,
            cond_channels=denoiser_cfg.cond_channels, ref_index=ref_index, search_radius=search_radius,
        )

    def condition(self, burst: torch.Tensor) -> list[torch.Tensor]:
        return self.conditioner(burst)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, cond: Sequence[torch.Tensor]) -> torch.Tensor:
        return self.denoiser(x_t, t, cond)
