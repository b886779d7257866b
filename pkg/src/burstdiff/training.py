"""Training loops for the baseline and the diffusion model, with resumable
checkpoints and a per-iteration loss log.

Checkpoint files are ``torch.save`` dictionaries::

    kind          "baseline" | "diffusion"
    model         state_dict (named parameter blocks with their shapes)
    optimizer     AdamW state_dict
    config        RunConfig.to_dict() snapshot
    config_hash   RunConfig.training_hash()
    iteration     completed optimizer steps
    rng           torch.Generator state driving batches and noise
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .baseline import BaselineSR
from .burst import BurstSample, stack_samples
from .config import RunConfig
from .diffusion import to_diffusion, training_loss
from .models import ConditionedDenoiser

logger = logging.getLogger(__name__)

KINDS = ("baseline", "diffusion")
CHECKPOINT_NAME = "checkpoint.pt"
LOSS_LOG_NAME = "loss.csv"


class NumericError(RuntimeError):
    """A non-finite loss was produced."""


class ResumeMismatchError(ValueError):
    """The checkpoint was produced by an incompatible configuration."""


@dataclass
class TrainData:
    raw: torch.Tensor  # (N, B, 4, h, w)
    hr: torch.Tensor  # (N, 3, H, W)

    @classmethod
    def from_samples(cls, samples: Sequence[BurstSample]) -> "TrainData":
        if not samples:
            raise ValueError("dataset is empty")
        raw, hr = stack_samples(samples)
        return cls(torch.from_numpy(raw), torch.from_numpy(hr))

    def __len__(self):
        return self.raw.shape[0]


def build_model(kind: str, cfg: RunConfig, seed: int | None = None) -> torch.nn.Module:
    """Construct a model with weights initialised from ``seed`` (default: run seed)."""
    seed = cfg.run.seed if seed is None else seed
    m = cfg.model
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if kind == "baseline":
            return BaselineSR(burst_size=cfg.data.burst_size, feat_dim=m.feat_dim, blocks=m.baseline_blocks,
                              scale=2 * cfg.data.downscale, search_radius=m.search_radius)
        if kind == "diffusion":
            return ConditionedDenoiser(cfg.denoiser_config(), burst_size=cfg.data.burst_size,
                                       feat_dim=m.feat_dim, search_radius=m.search_radius)
    raise ValueError(f"unknown model kind {kind!r}")


def make_optimizer(model: torch.nn.Module, cfg: RunConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)


def save_checkpoint(path, kind, model, optimizer, cfg: RunConfig, iteration: int,
                    generator: torch.Generator | None) -> None:
    state = {
        "kind": kind,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "config": cfg.to_dict(),
        "config_hash": cfg.training_hash(),
        "iteration": int(iteration),
        "rng": generator.get_state() if generator is not None else None,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(state, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> dict:
    return torch.load(Path(path), map_location="cpu", weights_only=True)


def load_model(path, expect_kind: str | None = None):
    """Rebuild a model from a checkpoint; returns (model, config, checkpoint)."""
    ckpt = load_checkpoint(path)
    if expect_kind is not None and ckpt["kind"] != expect_kind:
        raise ValueError(f"{path}: expected a {expect_kind} checkpoint, found {ckpt['kind']}")
    cfg = RunConfig.from_dict(ckpt["config"])
    model = build_model(ckpt["kind"], cfg)
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model, cfg, ckpt


def _step_loss(kind, model, raw, hr, cfg, schedule, generator):
    if kind == "baseline":
        pred = model(raw)
        return torch.mean((pred - hr) ** 2), None
    cond = model.condition(raw)
    return training_loss(model, to_diffusion(hr), cond, schedule, cfg.diffusion.tau_train,
                         generator, return_steps=True)


def _read_log(path, upto):
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return [row for row in csv.DictReader(fh) if int(row["iteration"]) <= upto]


_LOG_FIELDS = ["iteration", "loss", "t_min", "t_max", "steps"]


def train(kind: str, data: TrainData, cfg: RunConfig, out_dir=None, resume: bool = False,
          on_step: Callable[[int, float], None] | None = None):
    """Run ``cfg.optim.iters`` AdamW steps in total; returns (model, log rows).

    With ``out_dir`` the loop writes ``checkpoint.pt`` every ``ckpt_every``
    steps and at the end, plus ``loss.csv`` with one row per step. ``resume``
    continues from an existing checkpoint in ``out_dir``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    cfg.validate()
    if len(data) == 0:
        raise ValueError("dataset is empty")
    schedule = cfg.make_schedule() if kind == "diffusion" else None
    model = build_model(kind, cfg)
    optimizer = make_optimizer(model, cfg)
    generator = torch.Generator().manual_seed(cfg.run.seed + 1)
    start = 0
    rows: list[dict] = []
    ckpt_path = log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path, log_path = out_dir / CHECKPOINT_NAME, out_dir / LOSS_LOG_NAME
        cfg.save(out_dir / "config.ini")

    if resume:
        if ckpt_path is None or not ckpt_path.exists():
            raise FileNotFoundError(f"no checkpoint to resume in {out_dir}")
        ckpt = load_checkpoint(ckpt_path)
        if ckpt["kind"] != kind:
            raise ResumeMismatchError(f"checkpoint holds a {ckpt['kind']} model, not {kind}")
        if ckpt["config_hash"] != cfg.training_hash():
            raise ResumeMismatchError("configuration differs from the checkpoint's (config hash mismatch)")
        model.load_state_dict(ckpt["model"])
        optimizer.load_state_dict(ckpt["optimizer"])
        generator.set_state(ckpt["rng"])
        start = int(ckpt["iteration"])
        rows = _read_log(log_path, start)
        logger.info("resumed %s training at iteration %d", kind, start)

    log_fh = writer = None
    if log_path is not None:
        log_fh = log_path.open("w", newline="")
        writer = csv.DictWriter(log_fh, fieldnames=_LOG_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
        log_fh.flush()

    model.train()
    n = len(data)
    try:
        for it in range(start + 1, cfg.optim.iters + 1):
            idx = torch.randint(0, n, (cfg.optim.batch_size,), generator=generator)
            loss, steps = _step_loss(kind, model, data.raw[idx], data.hr[idx], cfg, schedule, generator)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NumericError(f"non-finite {kind} loss at iteration {it}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            row = {"iteration": it, "loss": repr(value), "t_min": "", "t_max": "", "steps": ""}
            if steps is not None:
                row.update(t_min=int(steps.min()), t_max=int(steps.max()),
                           steps=";".join(str(int(s)) for s in steps))
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
            if on_step is not None:
                on_step(it, value)
            if it % cfg.optim.log_every == 0:
                logger.info("%s iter %d loss %.6f", kind, it, value)
            if ckpt_path is not None and it % cfg.optim.ckpt_every == 0:
                log_fh.flush()
                save_checkpoint(ckpt_path, kind, model, optimizer, cfg, it, generator)
    finally:
        if log_fh is not None:
            log_fh.close()
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, kind, model, optimizer, cfg, max(start, cfg.optim.iters), generator)
    model.eval()
    return model, rows


@torch.no_grad()
def probe_loss(kind: str, model, data: TrainData, cfg: RunConfig, seed: int = 1234,
               batch_size: int = 8) -> float:
    """Deterministic loss over the whole dataset (fixed steps and noise)."""
    model.eval()
    schedule = cfg.make_schedule() if kind == "diffusion" else None
    gen = torch.Generator().manual_seed(seed)
    total, count = 0.0, 0
    for i in range(0, len(data), batch_size):
        raw, hr = data.raw[i:i + batch_size], data.hr[i:i + batch_size]
        loss, _ = _step_loss(kind, model, raw, hr, cfg, schedule, gen)
        total += float(loss) * raw.shape[0]
        count += raw.shape[0]
    return total / count


def loss_log_steps(rows) -> np.ndarray:
    """All diffusion steps recorded in a loss log."""
    out = []
    for row in rows:
        if row.get("steps"):
            out.extend(int(s) for s in str(row["steps"]).split(";"))
    return np.asarray(out, dtype=np.int64)
