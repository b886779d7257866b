"""Run configuration: INI file with one section per group, flag overrides,
cross-field validation and a stable hash used to guard resumes.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .burst import DegradationParams
from .denoiser import DenoiserConfig
from .diffusion import Initializer, ReverseStartConfig
from .schedule import NoiseSchedule, make_schedule


class ConfigError(ValueError):
    pass


# default start variance for each schedule kind
DEFAULT_BETA_1 = {"linear": 1e-4, "sigmoid": 1e-5}


@dataclass
class ScheduleSection:
    kind: str = "linear"
    steps: int = 1000
    beta_1: float | None = None
    beta_T: float = 0.02


@dataclass
class DiffusionSection:
    tau_train: int = 100
    tau: int = 5
    initializer: str = "baseline_sr"


@dataclass
class DataSection:
    hr_size: int = 256
    burst_size: int = 8
    max_shift: float = 24.0
    max_rot: float = 1.0
    downscale: int = 4
    noise_shot: float = 1e-3
    noise_read: float = 1e-5
    gamma: float = 2.2


@dataclass
class ModelSection:
    feat_dim: int = 48
    cond_channels: int = 256
    widths: tuple = (32, 64, 128)
    temb_dim: int = 128
    search_radius: int = 8
    baseline_blocks: int = 3


@dataclass
class OptimSection:
    lr: float = 1e-4
    weight_decay: float = 1e-2
    batch_size: int = 8
    iters: int = 1000
    log_every: int = 10
    ckpt_every: int = 100


@dataclass
class RunSection:
    seed: int = 0


SECTIONS = {
    "schedule": ScheduleSection,
    "diffusion": DiffusionSection,
    "data": DataSection,
    "model": ModelSection,
    "optim": OptimSection,
    "run": RunSection,
}

# fields that may change between a checkpoint and its resumption
_RESUME_FREE = {("optim", "iters"), ("optim", "log_every"), ("optim", "ckpt_every"),
                ("diffusion", "tau"), ("diffusion", "initializer")}


@dataclass
class RunConfig:
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    optim: OptimSection = field(default_factory=OptimSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        self.model.widths = tuple(int(w) for w in self.model.widths)
        if self.schedule.beta_1 is None:
            self.schedule.beta_1 = DEFAULT_BETA_1.get(self.schedule.kind, 1e-4)

    # -- derived objects --------------------------------------------------
    def make_schedule(self) -> NoiseSchedule:
        s = self.schedule
        return make_schedule(s.kind, s.steps, s.beta_1, s.beta_T)

    def degradation(self, no_noise: bool = False) -> DegradationParams:
        d = self.data
        p = DegradationParams(
            burst_size=d.burst_size, max_shift_px=d.max_shift, max_rot_deg=d.max_rot,
            downscale=d.downscale, noise_shot=d.noise_shot, noise_read=d.noise_read, gamma=d.gamma,
        )
        return p.without_noise() if no_noise else p

    def denoiser_config(self) -> DenoiserConfig:
        m = self.model
        return DenoiserConfig(widths=m.widths, temb_dim=m.temb_dim, cond_channels=m.cond_channels,
                              image_size=self.data.hr_size)

    def reverse_start(self) -> ReverseStartConfig:
        d = self.diffusion
        return ReverseStartConfig(tau=d.tau, tau_L=d.tau_train, initializer=d.initializer)

    @property
    def raw_size(self) -> int:
        return self.data.hr_size // (2 * self.data.downscale)

    # -- validation -------------------------------------------------------
    def validate(self) -> "RunConfig":
        try:
            s = self.make_schedule()
            self.degradation()
            self.denoiser_config()
            init = Initializer.parse(self.diffusion.initializer)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        d = self.diffusion
        if not 0 <= d.tau <= s.T:
            raise ConfigError(f"tau={d.tau} outside [0, {s.T}]")
        if not 1 <= d.tau_train <= s.T:
            raise ConfigError(f"tau_train={d.tau_train} outside [1, {s.T}]")
        if init is Initializer.RANDOM_NOISE and d.tau != s.T:
            raise ConfigError(f"random-noise start requires tau == T ({s.T}), got {d.tau}")
        data = self.data
        if data.hr_size % (2 * data.downscale):
            raise ConfigError(f"hr_size {data.hr_size} not divisible by {2 * data.downscale}")
        scale = 2 * data.downscale
        if scale & (scale - 1):
            raise ConfigError("2 * downscale must be a power of two")
        o = self.optim
        if o.lr <= 0 or o.batch_size < 1 or o.iters < 0 or o.log_every < 1 or o.ckpt_every < 1:
            raise ConfigError("invalid optimizer settings")
        if self.model.feat_dim < 1 or self.model.cond_channels < 1 or self.model.search_radius < 0:
            raise ConfigError("invalid model settings")
        return self

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"]["widths"] = list(self.model.widths)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, Any]]) -> "RunConfig":
        kw = {}
        for name, sec_cls in SECTIONS.items():
            # INI readers lowercase option names, so keys match case-insensitively
            known = {f.name.lower(): f.name for f in fields(sec_cls)}
            raw = dict(data.get(name, {}))
            unknown = {k for k in raw if k.lower() not in known}
            if unknown:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
            values = {known[k.lower()]: v for k, v in raw.items()}
            kw[name] = sec_cls(**{k: _coerce(sec_cls, k, v) for k, v in values.items()})
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown sections: {sorted(unknown)}")
        return cls(**kw)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name, values in self.to_dict().items():
            cp[name] = {k: _ini_value(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        return cls.from_dict({s: dict(cp[s]) for s in cp.sections()})

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_ini(Path(path).read_text())

    def override(self, **dotted: Any) -> "RunConfig":
        """Copy with ``section__key=value`` overrides; None values are skipped."""
        data = self.to_dict()
        for key, value in dotted.items():
            if value is None:
                continue
            section, _, name = key.partition("__")
            if section not in data or name not in data[section]:
                raise ConfigError(f"unknown setting {section}.{name}")
            data[section][name] = value
        kind_changed = data["schedule"]["kind"] != self.schedule.kind
        if kind_changed and dotted.get("schedule__beta_1") is None \
                and self.schedule.beta_1 == DEFAULT_BETA_1.get(self.schedule.kind):
            # follow the new kind's default start variance
            data["schedule"]["beta_1"] = None
        return RunConfig.from_dict(data)

    def training_hash(self) -> str:
        data = self.to_dict()
        for section, name in _RESUME_FREE:
            data[section].pop(name, None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _ini_value(v):
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(sec_cls, key, value):
    default = next(f for f in fields(sec_cls) if f.name == key)
    proto = default.default if default.default is not None else 0.0
    try:
        if value is None or value == "":
            if key == "beta_1":
                return None
            raise ConfigError(f"missing value for {key}")
        if isinstance(proto, bool):
            return str(value).lower() in ("1", "true", "yes", "on")
        if isinstance(proto, int):
            return int(value)
        if isinstance(proto, float):
            return float(value)
        if isinstance(proto, tuple):
            if isinstance(value, str):
                return tuple(int(x) for x in value.split(",") if x.strip())
            return tuple(int(x) for x in value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
