"""Noise schedules for the forward diffusion process.

Arrays are stored with a leading entry for step 0 so that ``s.beta[t]`` is the
variance of step ``t`` for ``t = 1..T``.  Step 0 is the clean image: beta 0,
alpha 1, alpha_bar 1, beta_bar 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    SIGMOID = "sigmoid"


class ScheduleError(ValueError):
    pass


# logistic argument range spanned by the sigmoid schedule
SIGMOID_SPAN = 6.0


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    kind: ScheduleKind
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_bar: np.ndarray

    def __post_init__(self):
        for arr in (self.beta, self.alpha, self.alpha_bar, self.beta_bar):
            arr.setflags(write=False)

    def check_step(self, t: int, lo: int = 0) -> int:
        if isinstance(t, bool) or int(t) != t:
            raise ScheduleError(f"step must be an integer, got {t!r}")
        t = int(t)
        if not lo <= t <= self.T:
            raise ScheduleError(f"step {t} outside [{lo}, {self.T}]")
        return t

    def posterior_variance(self, t: int) -> float:
        """Variance of q(x_{t-1} | x_t, x_0); zero at t = 1."""
        t = self.check_step(t, lo=1)
        return float(self.beta[t] * self.beta_bar[t - 1] / self.beta_bar[t])


def _validate(T, beta_1, beta_T):
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < beta_1 < beta_T < 1.0:
        raise ScheduleError(f"need 0 < beta_1 < beta_T < 1, got {beta_1}, {beta_T}")


def _from_betas(kind, betas):
    T = len(betas)
    beta = np.concatenate([[0.0], betas]).astype(np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    for t in range(1, T + 1):
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t]
    return NoiseSchedule(kind, T, beta, alpha, alpha_bar, 1.0 - alpha_bar)


def make_linear_schedule(T: int = 1000, beta_1: float = 1e-4, beta_T: float = 0.02) -> NoiseSchedule:
    _validate(T, beta_1, beta_T)
    T = int(T)
    if T == 1:
        return _from_betas(ScheduleKind.LINEAR, np.array([beta_1]))
    frac = np.arange(T, dtype=np.float64) / (T - 1)
    betas = beta_1 + frac * (beta_T - beta_1)
    betas[0], betas[-1] = beta_1, beta_T
    return _from_betas(ScheduleKind.LINEAR, betas)


def make_sigmoid_schedule(T: int = 1000, beta_1: float = 1e-5, beta_T: float = 0.02) -> NoiseSchedule:
    """Logistic ramp over [-6, 6], affinely rescaled so the endpoints are exact."""
    _validate(T, beta_1, beta_T)
    T = int(T)
    if T == 1:
        return _from_betas(ScheduleKind.SIGMOID, np.array([beta_1]))
    u = np.linspace(-SIGMOID_SPAN, SIGMOID_SPAN, T)
    sig = 1.0 / (1.0 + np.exp(-u))
    ramp = (sig - sig[0]) / (sig[-1] - sig[0])
    betas = beta_1 + ramp * (beta_T - beta_1)
    betas[0], betas[-1] = beta_1, beta_T
    return _from_betas(ScheduleKind.SIGMOID, betas)


def make_schedule(kind, T: int, beta_1: float, beta_T: float) -> NoiseSchedule:
    kind = ScheduleKind(kind)
    if kind is ScheduleKind.LINEAR:
        return make_linear_schedule(T, beta_1, beta_T)
    return make_sigmoid_schedule(T, beta_1, beta_T)


def alpha_bar_at(s: NoiseSchedule, t: int) -> float:
    return float(s.alpha_bar[s.check_step(t)])
