"""Burst super-resolution refined by a diffusion model started from an
intermediate step."""
from .diffusion import Initializer, ReverseStartConfig, refine, sample_from_intermediate
from .kernels import BACKEND
from .schedule import NoiseSchedule, make_linear_schedule, make_schedule, make_sigmoid_schedule

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Initializer",
    "NoiseSchedule",
    "ReverseStartConfig",
    "make_linear_schedule",
    "make_schedule",
    "make_sigmoid_schedule",
    "refine",
    "sample_from_intermediate",
]
