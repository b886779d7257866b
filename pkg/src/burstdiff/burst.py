"""Synthetic RAW bursts from RGB images and the on-disk dataset container.

Degradation: inverse gamma and per-channel gain (linearization), random
translation and rotation of every non-reference frame, box downsampling,
RGGB mosaicking and signal-dependent Gaussian noise.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from . import kernels

MAGIC = b"BSRD"
VERSION = 1
_HEADER = struct.Struct("<4sB6I")
_META_HEAD = struct.Struct("<QI3d3d")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm", ".webp")


@dataclass(frozen=True)
class DegradationParams:
    burst_size: int = 8
    max_shift_px: float = 24.0
    max_rot_deg: float = 1.0
    downscale: int = 4
    noise_shot: float = 1e-3
    noise_read: float = 1e-5
    gamma: float = 2.2
    gains: tuple = (1.0, 1.0, 1.0)
    ref_index: int = 0

    def __post_init__(self):
        if self.burst_size < 1:
            raise ValueError("burst_size must be >= 1")
        if not 0 <= self.ref_index < self.burst_size:
            raise ValueError("ref_index outside the burst")
        if self.max_shift_px < 0 or self.max_rot_deg < 0:
            raise ValueError("transform bounds must be nonnegative")
        if int(self.downscale) != self.downscale or self.downscale < 1:
            raise ValueError("downscale must be a positive integer")
        if self.noise_shot < 0 or self.noise_read < 0:
            raise ValueError("noise parameters must be nonnegative")
        if self.gamma <= 0 or len(self.gains) != 3 or min(self.gains) <= 0:
            raise ValueError("gamma and gains must be positive")

    def without_noise(self) -> "DegradationParams":
        return replace(self, noise_shot=0.0, noise_read=0.0)

    @property
    def noisy(self) -> bool:
        return self.noise_shot > 0 or self.noise_read > 0


@dataclass
class BurstMeta:
    seed: int
    ref_index: int
    # one row per frame: (shift_x px, shift_y px, rotation deg) on the HR grid
    transforms: np.ndarray
    gamma: float
    noise_shot: float
    noise_read: float
    gains: tuple = (1.0, 1.0, 1.0)


@dataclass
class BurstSample:
    raw: np.ndarray  # (B, 4, h, w) float32 RGGB planes in [0, 1]
    hr: np.ndarray  # (3, H, W) float32 sRGB in [0, 1]
    meta: BurstMeta

    @property
    def burst_size(self) -> int:
        return self.raw.shape[0]

    def equals(self, other: "BurstSample") -> bool:
        """Bitwise comparison of tensors and metadata."""
        a, b = self.meta, other.meta
        return (
            self.raw.dtype == other.raw.dtype
            and self.raw.shape == other.raw.shape
            and self.raw.tobytes() == other.raw.tobytes()
            and self.hr.shape == other.hr.shape
            and self.hr.tobytes() == other.hr.tobytes()
            and a.seed == b.seed
            and a.ref_index == b.ref_index
            and a.transforms.tobytes() == b.transforms.tobytes()
            and (a.gamma, a.noise_shot, a.noise_read) == (b.gamma, b.noise_shot, b.noise_read)
            and tuple(a.gains) == tuple(b.gains)
        )


# ----------------------------------------------------------------------------
# color / Bayer helpers

def linearize(srgb: np.ndarray, gamma: float = 2.2, gains=(1.0, 1.0, 1.0)) -> np.ndarray:
    """(H, W, 3) display-referred image -> linear sensor-like values."""
    return np.power(np.clip(srgb, 0.0, 1.0), gamma) * np.asarray(gains, dtype=np.float64)


def delinearize(linear: np.ndarray, gamma: float = 2.2, gains=(1.0, 1.0, 1.0)) -> np.ndarray:
    lin = np.clip(linear / np.asarray(gains, dtype=np.float64), 0.0, 1.0)
    return np.power(lin, 1.0 / gamma)


def mosaic(linear_rgb: np.ndarray) -> np.ndarray:
    """Sample an (2h, 2w, 3) image on an RGGB lattice, packed as (4, h, w).

    Plane order: R at (even, even), G at (even, odd), G at (odd, even),
    B at (odd, odd), with (row, column) indices.
    """
    img = np.asarray(linear_rgb)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] % 2 or img.shape[1] % 2:
        raise ValueError(f"mosaic needs even spatial dimensions, got {img.shape[:2]}")
    return np.stack([
        img[0::2, 0::2, 0],
        img[0::2, 1::2, 1],
        img[1::2, 0::2, 1],
        img[1::2, 1::2, 2],
    ])


def demosaic(planes: np.ndarray) -> np.ndarray:
    """Bilinear demosaic (4, h, w) -> (2h, 2w, 3)."""
    return kernels.demosaic_bilinear(planes)


def box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ValueError(f"size {h}x{w} not divisible by {factor}")
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def transform_matrix(shift_x: float, shift_y: float, rot_deg: float, height: int, width: int) -> np.ndarray:
    """Output->source map: rotate about the image centre, then translate."""
    th = np.deg2rad(rot_deg)
    c, s = np.cos(th), np.sin(th)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    return np.array([
        [c, -s, cx - c * cx + s * cy + shift_x],
        [s, c, cy - s * cx - c * cy + shift_y],
    ])


def sample_transforms(p: DegradationParams, rng: np.random.Generator) -> np.ndarray:
    tf = np.zeros((p.burst_size, 3))
    for i in range(p.burst_size):
        if i == p.ref_index:
            continue
        tf[i, 0] = rng.uniform(-p.max_shift_px, p.max_shift_px)
        tf[i, 1] = rng.uniform(-p.max_shift_px, p.max_shift_px)
        tf[i, 2] = rng.uniform(-p.max_rot_deg, p.max_rot_deg)
    return tf


def raw_size(hr_size: int, downscale: int = 4) -> int:
    return hr_size // (2 * downscale)


# ----------------------------------------------------------------------------
# synthesis

def synthesize_burst(hr: np.ndarray, p: DegradationParams, seed: int,
                     transforms: np.ndarray | None = None) -> BurstSample:
    """Degrade an (H, W, 3) sRGB image in [0, 1] into a RAW burst.

    ``transforms`` overrides the random draws (rows of shift_x, shift_y, deg).
    """
    hr = np.asarray(hr)
    if hr.ndim != 3 or hr.shape[2] != 3 or hr.shape[0] != hr.shape[1]:
        raise ValueError(f"expected square (H, H, 3) HR image, got shape {hr.shape}")
    if hr.shape[0] % (2 * p.downscale):
        raise ValueError(f"HR size {hr.shape[0]} not divisible by {2 * p.downscale}")
    if hr.min() < 0 or hr.max() > 1:
        raise ValueError("HR values must lie in [0, 1]")
    hr32 = np.ascontiguousarray(hr, dtype=np.float32)
    rng = np.random.default_rng(seed)

    if transforms is None:
        transforms = sample_transforms(p, rng)
    else:
        transforms = np.array(transforms, dtype=np.float64).reshape(p.burst_size, 3)
        transforms[p.ref_index] = 0.0
    linear = linearize(hr32.astype(np.float64), p.gamma, p.gains)
    size = hr.shape[0]

    frames = []
    for i in range(p.burst_size):
        if i == p.ref_index:
            warped = linear
        else:
            warped = kernels.warp_affine(linear, transform_matrix(*transforms[i], size, size))
        planes = mosaic(box_downsample(warped, p.downscale))
        if p.noisy:
            std = np.sqrt(p.noise_shot * np.clip(planes, 0.0, None) + p.noise_read)
            planes = planes + std * rng.standard_normal(planes.shape)
        frames.append(np.clip(planes, 0.0, 1.0))

    meta = BurstMeta(
        seed=int(seed), ref_index=p.ref_index, transforms=transforms,
        gamma=float(p.gamma), noise_shot=float(p.noise_shot), noise_read=float(p.noise_read),
        gains=tuple(float(g) for g in p.gains),
    )
    return BurstSample(np.stack(frames).astype(np.float32), hr32.transpose(2, 0, 1).copy(), meta)


def process_reference(sample_or_raw, gamma: float = 2.2, gains=(1.0, 1.0, 1.0), ref_index: int = 0) -> np.ndarray:
    """Demosaic the reference frame and re-apply gamma: (2h, 2w, 3) in [0, 1]."""
    if isinstance(sample_or_raw, BurstSample):
        m = sample_or_raw.meta
        raw, gamma, gains, ref_index = sample_or_raw.raw, m.gamma, m.gains, m.ref_index
    else:
        raw = sample_or_raw
    return delinearize(demosaic(raw[ref_index]), gamma, gains)


def synthetic_scene(size: int, rng: np.random.Generator) -> np.ndarray:
    """Procedural sRGB test scene: gradient, flat shapes and a striped patch."""
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    ang = rng.uniform(0, 2 * np.pi)
    ramp = 0.5 + 0.5 * np.clip((np.cos(ang) * (xx - 0.5) + np.sin(ang) * (yy - 0.5)) * 1.4, -1, 1)
    img = c0 + (c1 - c0) * ramp[..., None]
    for _ in range(int(rng.integers(3, 7))):
        color = rng.uniform(0.0, 1.0, 3)
        cy, cx = rng.uniform(0.1, 0.9, 2)
        ry, rx = rng.uniform(0.05, 0.25, 2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        img[mask] = color
    # low-amplitude stripes inside a random window
    freq = rng.uniform(6, 16)
    th = rng.uniform(0, np.pi)
    stripes = 0.08 * np.sin(2 * np.pi * freq * (np.cos(th) * xx + np.sin(th) * yy))
    y0, x0 = rng.uniform(0.0, 0.5, 2)
    win = (yy > y0) & (yy < y0 + 0.5) & (xx > x0) & (xx < x0 + 0.5)
    img = img + (stripes * win)[..., None]
    return np.clip(img, 0.0, 1.0)


def derive_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def load_hr_images(hr_dir) -> list[np.ndarray]:
    from PIL import Image

    paths = sorted(p for p in Path(hr_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise FileNotFoundError(f"no images found in {hr_dir}")
    images = []
    for path in paths:
        with Image.open(path) as im:
            images.append(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0)
    return images


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than crop size {size}")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return img[y:y + size, x:x + size]


def generate_dataset(count: int, p: DegradationParams, seed: int, hr_size: int = 256,
                     hr_images: Sequence[np.ndarray] | None = None) -> list[BurstSample]:
    """``count`` samples; sample i depends only on (inputs, params, seed, i)."""
    samples = []
    for i in range(count):
        s_i = derive_seed(seed, i)
        rng = np.random.default_rng([s_i, 1])
        if hr_images:
            hr = random_crop(hr_images[i % len(hr_images)], hr_size, rng)
        else:
            hr = synthetic_scene(hr_size, rng)
        samples.append(synthesize_burst(hr, p, s_i))
    return samples


def stack_samples(samples: Sequence[BurstSample]) -> tuple[np.ndarray, np.ndarray]:
    """(N, B, 4, h, w) bursts and (N, 3, H, W) ground truth."""
    return np.stack([s.raw for s in samples]), np.stack([s.hr for s in samples])


# ----------------------------------------------------------------------------
# container

class DatasetError(Exception):
    code = "dataset_error"


class BadMagicError(DatasetError):
    code = "bad_magic"


class VersionMismatchError(DatasetError):
    code = "version_mismatch"


class TruncatedError(DatasetError):
    code = "truncated"


class InconsistentSampleError(DatasetError):
    code = "inconsistent_sample"


def _dims(samples):
    if not samples:
        return 0, 0, 0, 0, 0
    b, _, h, w = samples[0].raw.shape
    _, hh, ww = samples[0].hr.shape
    for s in samples:
        if s.raw.shape != (b, 4, h, w) or s.hr.shape != (3, hh, ww):
            raise InconsistentSampleError("all samples must share dimensions")
    return b, h, w, hh, ww


def dump_dataset(samples: Sequence[BurstSample], fh: BinaryIO) -> None:
    samples = list(samples)
    b, h, w, hh, ww = _dims(samples)
    fh.write(_HEADER.pack(MAGIC, VERSION, len(samples), b, h, w, hh, ww))
    for s in samples:
        m = s.meta
        fh.write(_META_HEAD.pack(m.seed, m.ref_index, m.gamma, m.noise_shot, m.noise_read, *m.gains))
        fh.write(np.ascontiguousarray(m.transforms, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(s.raw, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(s.hr, dtype="<f4").tobytes())


def write_dataset(samples: Iterable[BurstSample], path) -> None:
    buf = io.BytesIO()
    dump_dataset(list(samples), buf)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def _take(view, pos, n):
    if pos + n > len(view):
        raise TruncatedError(f"payload truncated at byte {pos} (need {n} more)")
    return view[pos:pos + n], pos + n


def loads_dataset(data: bytes) -> list[BurstSample]:
    view = memoryview(data)
    if len(view) < 5:
        if bytes(view[:4]) != MAGIC[:len(view[:4])]:
            raise BadMagicError("not a BSRD file")
        raise TruncatedError("file shorter than header")
    if bytes(view[:4]) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(view[:4])!r}")
    if view[4] != VERSION:
        raise VersionMismatchError(f"unsupported version {view[4]} (expected {VERSION})")
    head, pos = _take(view, 0, _HEADER.size)
    _, _, count, b, h, w, hh, ww = _HEADER.unpack(head)
    samples = []
    for _ in range(count):
        chunk, pos = _take(view, pos, _META_HEAD.size)
        seed, ref, gamma, shot, read, g0, g1, g2 = _META_HEAD.unpack(chunk)
        chunk, pos = _take(view, pos, 8 * 3 * b)
        tf = np.frombuffer(chunk, dtype="<f8").reshape(b, 3).astype(np.float64)
        chunk, pos = _take(view, pos, 4 * b * 4 * h * w)
        raw = np.frombuffer(chunk, dtype="<f4").reshape(b, 4, h, w).astype(np.float32)
        chunk, pos = _take(view, pos, 4 * 3 * hh * ww)
        hr = np.frombuffer(chunk, dtype="<f4").reshape(3, hh, ww).astype(np.float32)
        meta = BurstMeta(seed, ref, tf, gamma, shot, read, (g0, g1, g2))
        samples.append(BurstSample(raw, hr, meta))
    if pos != len(view):
        raise DatasetError(f"{len(view) - pos} trailing bytes after {count} samples")
    return samples


def read_dataset(path) -> list[BurstSample]:
    return loads_dataset(Path(path).read_bytes())
