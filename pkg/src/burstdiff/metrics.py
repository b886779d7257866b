"""Distortion metrics, external perceptual-metric plug-ins and reports."""
from __future__ import annotations

import csv
import json
import math
import shlex
import shutil
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0
UNAVAILABLE = "unavailable"
FAILED = "failed"


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0, cap: float = PSNR_CAP) -> float:
    err = mse(a, b)
    if err == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(peak * peak / err))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, win):
    # separable Gaussian, keeping only positions where the window fits
    y = ndimage.correlate1d(x, win, axis=0, mode="constant")
    y = ndimage.correlate1d(y, win, axis=1, mode="constant")
    r = len(win) // 2
    return y[r:x.shape[0] - r, r:x.shape[1] - r]


def ssim(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0,
         sigma: float = 1.5) -> float:
    """Mean SSIM over positions and channels.

    Accepts (H, W) or channel-first (C, H, W) arrays.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {window}x{window} window")
    if np.array_equal(a, b):
        return 1.0
    win = gaussian_window(window, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    vals = []
    for x, y in zip(a, b):
        mx, my = _filter_valid(x, win), _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mx * mx
        syy = _filter_valid(y * y, win) - my * my
        sxy = _filter_valid(x * y, win) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


# ----------------------------------------------------------------------------
# plug-ins

class PluginError(RuntimeError):
    pass


@dataclass
class PerceptualPlugin:
    """External metric invoked through a command template.

    Pair templates use ``{a}`` and ``{b}`` (paths to .npy files holding
    (3, H, W) float images); distribution templates use ``{dir_a}`` and
    ``{dir_b}``. The command must print one float on standard output.
    """

    name: str
    template: str
    timeout: float = 600.0

    @property
    def argv(self) -> list[str]:
        return shlex.split(self.template)

    @property
    def available(self) -> bool:
        argv = self.argv
        return bool(argv) and shutil.which(argv[0]) is not None

    @property
    def is_distribution(self) -> bool:
        return "{dir_a}" in self.template or "{dir_b}" in self.template

    def _run(self, **paths) -> float:
        argv = [arg.format(**paths) for arg in self.argv]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise PluginError(f"{self.name}: {exc}") from exc
        if proc.returncode != 0:
            raise PluginError(f"{self.name}: exit status {proc.returncode}: {proc.stderr.strip()}")
        try:
            return float(proc.stdout.strip().split()[-1])
        except (ValueError, IndexError):
            raise PluginError(f"{self.name}: unparseable output {proc.stdout!r}") from None

    def pair(self, a, b) -> float:
        with tempfile.TemporaryDirectory() as tmp:
            pa, pb = Path(tmp, "a.npy"), Path(tmp, "b.npy")
            np.save(pa, np.asarray(a, dtype=np.float64))
            np.save(pb, np.asarray(b, dtype=np.float64))
            return self._run(a=str(pa), b=str(pb))

    def distribution(self, images_a, images_b) -> float:
        with tempfile.TemporaryDirectory() as tmp:
            da, db = Path(tmp, "a"), Path(tmp, "b")
            da.mkdir()
            db.mkdir()
            for i, (x, y) in enumerate(zip(images_a, images_b)):
                np.save(da / f"{i:05d}.npy", np.asarray(x, dtype=np.float64))
                np.save(db / f"{i:05d}.npy", np.asarray(y, dtype=np.float64))
            return self._run(dir_a=str(da), dir_b=str(db))


def perceptual_plugin(name: str, template: str) -> Callable:
    """Per-pair metric function; returns "unavailable" or "failed" instead of a value on error."""
    plugin = PerceptualPlugin(name, template)

    def metric(a, b):
        if not plugin.available:
            return UNAVAILABLE
        try:
            return plugin.pair(a, b)
        except PluginError:
            return FAILED

    metric.plugin = plugin
    return metric


def parse_plugin_spec(spec: str) -> PerceptualPlugin:
    """``name=command template`` as given on the command line."""
    name, sep, template = spec.partition("=")
    if not sep or not name.strip() or not template.strip():
        raise ValueError(f"plug-in spec must look like name=command, got {spec!r}")
    return PerceptualPlugin(name.strip(), template.strip())


# ----------------------------------------------------------------------------
# reports

@dataclass
class MetricReport:
    """Per-sample metric rows plus experiment identifiers."""

    metrics: list[str]
    ids: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)
    # distribution-level metrics (one value for the whole set)
    dataset_values: dict = field(default_factory=dict)

    def add(self, sample: int, values: Mapping[str, object]) -> None:
        self.rows.append({"sample": sample, **{m: values.get(m, UNAVAILABLE) for m in self.metrics}})

    @property
    def count(self) -> int:
        return len(self.rows)

    def aggregate(self) -> dict:
        out = {}
        for m in self.metrics:
            vals = [r[m] for r in self.rows if isinstance(r[m], (int, float)) and not isinstance(r[m], bool)]
            out[m] = float(np.mean(vals)) if vals else UNAVAILABLE
        out.update(self.dataset_values)
        return out

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["sample", *self.metrics])
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})

    def to_dict(self) -> dict:
        return {"ids": self.ids, "count": self.count, "aggregate": self.aggregate()}

    def to_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def read_report_csv(path) -> list[dict]:
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                try:
                    parsed[k] = int(v) if k == "sample" else float(v)
                except ValueError:
                    parsed[k] = v
            rows.append(parsed)
    return rows


def _sample_values(p, t, plugins):
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    vals = {"psnr": psnr(p, t), "ssim": ssim(p, t)}
    for plug in plugins:
        if not plug.available:
            vals[plug.name] = UNAVAILABLE
            continue
        try:
            vals[plug.name] = plug.pair(p, t)
        except PluginError:
            vals[plug.name] = FAILED
    return vals


def evaluate_pairs(preds, targets, plugins=(), ids=None, workers: int = 1) -> MetricReport:
    """PSNR/SSIM (+ plug-ins) for matching (3, H, W) prediction/target arrays.

    ``workers > 1`` evaluates samples in a thread pool; row order is kept.
    """
    plugins = list(plugins)
    pair_plugins = [p for p in plugins if not p.is_distribution]
    report = MetricReport(["psnr", "ssim"] + [p.name for p in pair_plugins], dict(ids or {}))
    pairs = list(zip(preds, targets))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(lambda pt: _sample_values(*pt, pair_plugins), pairs))
    else:
        values = [_sample_values(p, t, pair_plugins) for p, t in pairs]
    for i, vals in enumerate(values):
        report.add(i, vals)
    for plug in plugins:
        if not plug.is_distribution:
            continue
        if not plug.available:
            report.dataset_values[plug.name] = UNAVAILABLE
            continue
        try:
            report.dataset_values[plug.name] = plug.distribution(preds, targets)
        except PluginError:
            report.dataset_values[plug.name] = FAILED
    return report
