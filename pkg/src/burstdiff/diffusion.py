"""Forward noising, the restricted-range training objective and ancestral
sampling that starts from an intermediate step.

Images handled here live in diffusion space, i.e. [-1, 1]. ``to_diffusion``
and ``from_diffusion`` convert from/to the [0, 1] image range.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import torch

from .schedule import NoiseSchedule, ScheduleError

logger = logging.getLogger(__name__)

# eps_hat = model(x_t, t, cond) with t a LongTensor of shape (N,)
NoisePredictor = Callable[[torch.Tensor, torch.Tensor, Sequence[torch.Tensor]], torch.Tensor]


class Initializer(str, Enum):
    RANDOM_NOISE = "random_noise"
    BICUBIC = "bicubic"
    BASELINE_SR = "baseline_sr"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        try:
            return _INIT_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown initializer {value!r}") from None


_INIT_ALIASES = {
    "random_noise": Initializer.RANDOM_NOISE,
    "noise": Initializer.RANDOM_NOISE,
    "bicubic": Initializer.BICUBIC,
    "baseline_sr": Initializer.BASELINE_SR,
    "baseline": Initializer.BASELINE_SR,
}


class OutOfTrainedRangeWarning(UserWarning):
    """Sampling starts above the largest step the model was trained on."""


@dataclass(frozen=True)
class ReverseStartConfig:
    tau: int
    tau_L: int
    initializer: Initializer = Initializer.BASELINE_SR

    def __post_init__(self):
        object.__setattr__(self, "initializer", Initializer.parse(self.initializer))
        if self.tau < 0:
            raise ScheduleError(f"tau must be >= 0, got {self.tau}")
        if self.tau_L < 1:
            raise ScheduleError(f"tau_L must be >= 1, got {self.tau_L}")

    def validate(self, s: NoiseSchedule) -> None:
        s.check_step(self.tau)
        s.check_step(self.tau_L, lo=1)
        if self.initializer is Initializer.RANDOM_NOISE and self.tau != s.T:
            raise ScheduleError(f"random-noise start requires tau == T ({s.T}), got {self.tau}")

    @property
    def out_of_trained_range(self) -> bool:
        return self.tau > self.tau_L


def to_diffusion(img01: torch.Tensor) -> torch.Tensor:
    return img01 * 2.0 - 1.0


def from_diffusion(x: torch.Tensor) -> torch.Tensor:
    return ((x + 1.0) * 0.5).clamp(0.0, 1.0)


def _randn_like(x, generator):
    return torch.randn(x.shape, generator=generator, dtype=x.dtype, device=x.device)


def _per_item(values, t, like):
    """Gather schedule values at steps ``t`` and broadcast against ``like``."""
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        v = torch.tensor(values, dtype=like.dtype, device=like.device)[t.long()]
        return v.view(-1, *([1] * (like.ndim - 1)))
    return float(values[int(t)])


def q_sample_step(x_prev: torch.Tensor, t: int, s: NoiseSchedule,
                  generator: torch.Generator | None = None,
                  noise: torch.Tensor | None = None) -> torch.Tensor:
    """One forward step: sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps."""
    t = s.check_step(t, lo=1)
    if noise is None:
        noise = _randn_like(x_prev, generator)
    return math.sqrt(s.alpha[t]) * x_prev + math.sqrt(s.beta[t]) * noise


def q_sample_closed(x0: torch.Tensor, t, s: NoiseSchedule, eps: torch.Tensor) -> torch.Tensor:
    """Closed-form marginal: sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.

    ``t`` is either a scalar step or a tensor with one step per batch item.
    """
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != image shape {tuple(x0.shape)}")
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        if t.numel() and (int(t.min()) < 0 or int(t.max()) > s.T):
            raise ScheduleError(f"steps outside [0, {s.T}]")
        a = _per_item(s.alpha_bar, t, x0).sqrt()
        b = _per_item(s.beta_bar, t, x0).sqrt()
        return a * x0 + b * eps
    t = s.check_step(t)
    if t == 0:
        return x0.clone()
    return math.sqrt(s.alpha_bar[t]) * x0 + math.sqrt(s.beta_bar[t]) * eps


def sample_timesteps(n: int, tau_L: int, s: NoiseSchedule,
                     generator: torch.Generator | None = None) -> torch.Tensor:
    """Uniform steps in {1, ..., tau_L}."""
    if tau_L < 1 or tau_L > s.T:
        raise ScheduleError(f"tau_L must lie in [1, {s.T}], got {tau_L}")
    return torch.randint(1, tau_L + 1, (n,), generator=generator)


def training_loss(model: NoisePredictor, x0: torch.Tensor, cond: Sequence[torch.Tensor],
                  s: NoiseSchedule, tau_L: int, generator: torch.Generator | None = None,
                  return_steps: bool = False):
    """Mean squared error of the noise prediction, steps restricted to 1..tau_L.

    ``x0`` is a batch (N, C, H, W) in diffusion space and ``cond`` the matching
    conditioning pyramid.
    """
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    t = sample_timesteps(x0.shape[0], tau_L, s, generator)
    eps = _randn_like(x0, generator)
    x_t = q_sample_closed(x0, t, s, eps)
    eps_hat = model(x_t, t, cond)
    loss = torch.mean((eps_hat - eps) ** 2)
    if return_steps:
        return loss, t
    return loss


def reverse_step(x_t: torch.Tensor, t: int, eps_hat: torch.Tensor, s: NoiseSchedule,
                 generator: torch.Generator | None = None,
                 noise: torch.Tensor | None = None) -> torch.Tensor:
    """Ancestral step x_t -> x_{t-1} with posterior variance; noiseless at t = 1."""
    t = s.check_step(t, lo=1)
    coef = s.beta[t] / math.sqrt(s.beta_bar[t])
    mean = (x_t - coef * eps_hat) / math.sqrt(s.alpha[t])
    if t == 1:
        return mean
    if noise is None:
        noise = _randn_like(x_t, generator)
    return mean + math.sqrt(s.posterior_variance(t)) * noise


@torch.no_grad()
def sample_from_intermediate(x0_init: torch.Tensor | None, cfg: ReverseStartConfig, s: NoiseSchedule,
                             model: NoisePredictor, cond: Sequence[torch.Tensor],
                             generator: torch.Generator | None = None,
                             shape: Sequence[int] | None = None) -> torch.Tensor:
    """Noise ``x0_init`` to step tau and run the reverse chain down to step 0.

    With the random-noise initializer ``x0_init`` is ignored (pass ``shape``
    if it is None) and the chain starts from a standard normal draw at T.
    """
    cfg.validate(s)
    if cfg.out_of_trained_range and cfg.initializer is not Initializer.RANDOM_NOISE:
        msg = f"reverse start step {cfg.tau} exceeds trained range 1..{cfg.tau_L}"
        logger.warning(msg)
        warnings.warn(msg, OutOfTrainedRangeWarning, stacklevel=2)

    if cfg.initializer is Initializer.RANDOM_NOISE:
        if x0_init is not None:
            shape, dtype, device = x0_init.shape, x0_init.dtype, x0_init.device
        elif shape is None:
            raise ValueError("shape is required when x0_init is None")
        else:
            dtype, device = torch.get_default_dtype(), None
        x = torch.randn(tuple(shape), generator=generator, dtype=dtype, device=device)
    else:
        if x0_init is None:
            raise ValueError("x0_init is required for this initializer")
        if cfg.tau == 0:
            return x0_init.clone()
        x = q_sample_closed(x0_init, cfg.tau, s, _randn_like(x0_init, generator))

    n = x.shape[0]
    for t in range(cfg.tau, 0, -1):
        steps = torch.full((n,), t, dtype=torch.long, device=x.device)
        eps_hat = model(x, steps, cond)
        x = reverse_step(x, t, eps_hat, s, generator)
    return x


def refine(initial01: torch.Tensor | None, cfg: ReverseStartConfig, s: NoiseSchedule,
           model: NoisePredictor, cond: Sequence[torch.Tensor],
           generator: torch.Generator | None = None,
           shape: Sequence[int] | None = None) -> torch.Tensor:
    """Image-range wrapper around ``sample_from_intermediate``.

    Takes and returns [0, 1] images; tau = 0 returns the initial image as is.
    """
    if cfg.initializer is not Initializer.RANDOM_NOISE and cfg.tau == 0:
        cfg.validate(s)
        return initial01.clone()
    x0 = None if initial01 is None else to_diffusion(initial01)
    out = sample_from_intermediate(x0, cfg, s, model, cond, generator, shape=shape)
    return from_diffusion(out)
