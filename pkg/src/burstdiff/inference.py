"""Sampling pipeline shared by the CLI commands: initial images, batched
refinement with per-chunk seeds, τ sweeps and the ablation rows.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .baseline import baseline_forward, bicubic_init
from .burst import derive_seed
from .diffusion import Initializer, OutOfTrainedRangeWarning, ReverseStartConfig, refine
from .metrics import evaluate_pairs
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)


def initial_images(initializer, raw: torch.Tensor, data_cfg, baseline=None) -> torch.Tensor | None:
    """(N, 3, H, W) starting images in [0, 1]; None for the random-noise start."""
    init = Initializer.parse(initializer)
    if init is Initializer.RANDOM_NOISE:
        return None
    if init is Initializer.BICUBIC:
        return bicubic_init(raw.numpy(), scale=data_cfg.downscale, gamma=data_cfg.gamma).image
    if baseline is None:
        raise ValueError("the baseline initializer needs a trained baseline model")
    return torch.cat([baseline_forward(raw[i:i + 8], baseline).image for i in range(0, raw.shape[0], 8)])


@torch.no_grad()
def sample_images(model, raw: torch.Tensor, init01: torch.Tensor | None, rs: ReverseStartConfig,
                  schedule: NoiseSchedule, seed: int, batch_size: int = 8) -> torch.Tensor:
    """Refine every burst; chunk k draws its noise from ``derive_seed(seed, k)``."""
    model.eval()
    n = raw.shape[0]
    size = model.denoiser.cfg.image_size
    out = []
    for k, i in enumerate(range(0, n, batch_size)):
        chunk = raw[i:i + batch_size]
        init = None if init01 is None else init01[i:i + batch_size]
        if init is not None and rs.tau == 0 and rs.initializer is not Initializer.RANDOM_NOISE:
            out.append(init.clone())
            continue
        gen = torch.Generator().manual_seed(derive_seed(seed, k) % (2 ** 63))
        cond = model.condition(chunk)
        shape = (chunk.shape[0], 3, size, size)
        out.append(refine(init, rs, schedule, model, cond, gen, shape=shape))
    return torch.cat(out) if out else torch.zeros(0, 3, size, size)


# ----------------------------------------------------------------------------
# τ sweeps

SWEEP_FIELDS = ["tau", "metric", "value", "n_samples", "out_of_range"]


def sweep_tau(model, raw, hr, init01, taus: Sequence[int], tau_L: int, initializer, schedule,
              seed: int, plugins=(), batch_size: int = 8) -> list[dict]:
    """Long-format rows (tau, metric, value, n_samples, out_of_range)."""
    rows = []
    targets = hr.numpy()
    for tau in taus:
        rs = ReverseStartConfig(int(tau), tau_L, initializer)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutOfTrainedRangeWarning)
            pred = sample_images(model, raw, init01, rs, schedule, seed, batch_size)
        report = evaluate_pairs(pred.numpy(), targets, plugins)
        for metric, value in report.aggregate().items():
            rows.append({"tau": int(tau), "metric": metric, "value": value,
                         "n_samples": report.count, "out_of_range": int(rs.out_of_trained_range)})
        logger.info("tau=%d %s", tau, report.aggregate())
    return rows


def write_sweep_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        for row in rows:
            v = row["value"]
            writer.writerow({**row, "value": repr(float(v)) if isinstance(v, (int, float)) else v})


def read_sweep_csv(path) -> dict[str, list[tuple[int, float]]]:
    """Metric -> [(tau, value)] sorted by tau; non-numeric values are dropped."""
    series: dict[str, list[tuple[int, float]]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                value = float(row["value"])
            except ValueError:
                continue
            series.setdefault(row["metric"], []).append((int(row["tau"]), value))
    return {m: sorted(v) for m, v in series.items()}


def plot_sweep(csv_path, png_path) -> None:
    """Metric-vs-τ panels (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = read_sweep_csv(csv_path)
    fig, axes = plt.subplots(1, max(1, len(series)), figsize=(4 * max(1, len(series)), 3), squeeze=False)
    for ax, (metric, pts) in zip(axes[0], series.items()):
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
        ax.set_xlabel("reverse start step")
        ax.set_ylabel(metric)
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)


# ----------------------------------------------------------------------------
# ablation rows

@dataclass(frozen=True)
class AblationRow:
    key: str
    label: str
    initializer: Initializer
    tau_train: int
    tau: int | None  # None: the schedule length T
    expected_degraded: bool = False


ABLATION_ROWS = {
    "a": AblationRow("a", "from random noise", Initializer.RANDOM_NOISE, 1000, None),
    "b": AblationRow("b", "from bicubic upscaling", Initializer.BICUBIC, 1000, 400),
    "c": AblationRow("c", "from bicubic upscaling", Initializer.BICUBIC, 100, 5, expected_degraded=True),
    "d": AblationRow("d", "from baseline SR", Initializer.BASELINE_SR, 1000, 5),
    "e": AblationRow("e", "from baseline SR", Initializer.BASELINE_SR, 100, 5),
}


def parse_rows(selection: str) -> list[AblationRow]:
    keys = [k for k in selection.replace(",", "").strip().lower()]
    if not keys:
        raise ValueError("no ablation rows selected")
    unknown = [k for k in keys if k not in ABLATION_ROWS]
    if unknown:
        raise ValueError(f"unknown ablation rows {unknown}; choose from {sorted(ABLATION_ROWS)}")
    return [ABLATION_ROWS[k] for k in dict.fromkeys(keys)]


def required_checkpoints(rows: Sequence[AblationRow]) -> set[str]:
    """Names of checkpoints the rows need: ``diffusion_<tau_L>`` and ``baseline``."""
    need = {f"diffusion_{r.tau_train}" for r in rows}
    if any(r.initializer is Initializer.BASELINE_SR for r in rows):
        need.add("baseline")
    return need


def to_uint8(img_chw: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img_chw, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_png(img_chw, path) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(np.asarray(img_chw))).save(path)


def make_grid(panels: Sequence[np.ndarray | None], size) -> np.ndarray:
    """Side-by-side (3, H, k*W) strip; missing panels are black."""
    h, w = size
    return np.concatenate([np.zeros((3, h, w), np.float32) if p is None else np.asarray(p, np.float32)
                           for p in panels], axis=2)
