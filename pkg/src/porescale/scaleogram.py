"""Event rel-current waveforms to standardized log-magnitude scaleograms.

Pipeline per event: CWT magnitude, log(|W| + epsilon), bilinear resize to
the target image size. Row index follows scale index, so the top row is
the smallest scale (highest frequency) and the bottom row the lowest.
Pixel statistics for standardization come from training images only and
are persisted separately so scaleogram files stay split-agnostic.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .wavelets import CwtCoefficients, MotherWavelet, ScaleGrid, Signal, cwt

_NPSG_MAGIC = b"NPSG"
_NPSG_VERSION = 1

DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True)
class Scaleogram:
    pixels: np.ndarray  # float32, shape (height, width)
    height: int
    width: int
    event_id: int = 0
    grid_id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.shape != (self.height, self.width):
            raise ValueError("pixel shape does not match declared dimensions")
        if not np.all(np.isfinite(px)):
            raise ValueError("scaleogram pixels must be finite")
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class PixelStats:
    mean: float
    std: float
    split_id: str
    n_pixels: int

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")


def grid_signature(wavelet: MotherWavelet, grid: ScaleGrid) -> str:
    name = type(wavelet).__name__.lower()
    return f"{name}-v{grid.n_voices}-a{grid.a_min:.6g}:{grid.a_max:.6g}"


def bilinear_resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-pixel-center bilinear resize.

    Output pixel i samples source coordinate (i + 0.5) * src/dst - 0.5,
    clamped to the valid range, then blends the four neighbors. Identity
    sizes reproduce the input exactly.
    """
    src = np.asarray(image, dtype=np.float64)
    if src.ndim != 2 or src.size == 0:
        raise ValueError("image must be a non-empty 2-D array")
    if height < 1 or width < 1:
        raise ValueError("target dimensions must be >= 1")
    sh, sw = src.shape

    def axis_coords(dst: int, n: int):
        c = (np.arange(dst) + 0.5) * (n / dst) - 0.5
        c = np.clip(c, 0.0, n - 1.0)
        lo = np.floor(c).astype(np.int64)
        hi = np.minimum(lo + 1, n - 1)
        frac = c - lo
        return lo, hi, frac

    ry_lo, ry_hi, fy = axis_coords(height, sh)
    rx_lo, rx_hi, fx = axis_coords(width, sw)
    top = src[ry_lo][:, rx_lo] * (1.0 - fx) + src[ry_lo][:, rx_hi] * fx
    bot = src[ry_hi][:, rx_lo] * (1.0 - fx) + src[ry_hi][:, rx_hi] * fx
    return top * (1.0 - fy[:, None]) + bot * fy[:, None]


def scaleogram_from_rel(
    rel_samples: np.ndarray,
    wavelet: MotherWavelet,
    grid: ScaleGrid,
    out_size: tuple[int, int] = (64, 64),
    epsilon: float = DEFAULT_EPSILON,
    sample_rate_hz: float = 1.0,
    event_id: int = 0,
) -> Scaleogram:
    """Core transform on a relative-current waveform."""
    rel = np.asarray(rel_samples, dtype=np.float64)
    if rel.size < 8:
        raise ValueError("need at least 8 in-event samples")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    coeffs: CwtCoefficients = cwt(Signal(rel, sample_rate_hz), wavelet, grid)
    logmag = np.log(np.abs(coeffs.values) + epsilon)
    h, w = out_size
    pixels = bilinear_resize(logmag, h, w).astype(np.float32)
    return Scaleogram(pixels, h, w, event_id=event_id, grid_id=grid_signature(wavelet, grid))


def event_to_scaleogram(
    event,
    wavelet: MotherWavelet,
    grid: ScaleGrid,
    out_size: tuple[int, int] = (64, 64),
    epsilon: float = DEFAULT_EPSILON,
    event_id: int = 0,
) -> Scaleogram:
    """Scaleogram of a detected event's normalized current."""
    return scaleogram_from_rel(
        event.rel_samples, wavelet, grid, out_size, epsilon,
        sample_rate_hz=1.0, event_id=event_id,
    )


def compute_stats(train_scaleograms, split_id: str = "train") -> PixelStats:
    """Mean/std over every training pixel, single pass, batched Welford merge."""
    n = 0
    mean = 0.0
    m2 = 0.0
    for s in train_scaleograms:
        px = s.pixels.astype(np.float64)
        bn = px.size
        bmean = float(px.mean())
        bm2 = float(((px - bmean) ** 2).sum())
        delta = bmean - mean
        total = n + bn
        mean += delta * bn / total
        m2 += bm2 + delta * delta * n * bn / total
        n = total
    if n == 0:
        raise ValueError("train set is empty")
    var = m2 / n
    if var <= 0:
        raise ValueError("train set has zero pixel variance")
    return PixelStats(mean=mean, std=float(np.sqrt(var)), split_id=split_id, n_pixels=n)


def standardize(s: Scaleogram, stats: PixelStats) -> Scaleogram:
    px = (s.pixels.astype(np.float64) - stats.mean) / stats.std
    return replace(s, pixels=px.astype(np.float32))


def write_scaleogram(path, s: Scaleogram) -> None:
    """NPSG v1: magic, u32 version, u32 H, u32 W, u64 event_id, f32 pixels."""
    with open(path, "wb") as fh:
        fh.write(_NPSG_MAGIC)
        fh.write(struct.pack("<IIIQ", _NPSG_VERSION, s.height, s.width, s.event_id))
        fh.write(s.pixels.astype("<f4").tobytes())


def read_scaleogram(path) -> Scaleogram:
    with open(path, "rb") as fh:
        if fh.read(4) != _NPSG_MAGIC:
            raise ValueError("not a scaleogram file")
        version, h, w, event_id = struct.unpack("<IIIQ", fh.read(20))
        if version != _NPSG_VERSION:
            raise ValueError(f"unsupported scaleogram version {version}")
        payload = fh.read(4 * h * w)
        if len(payload) != 4 * h * w:
            raise ValueError("scaleogram file truncated")
        px = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return Scaleogram(px.copy(), h, w, event_id=event_id)


def write_stats(path, stats: PixelStats) -> None:
    with open(path, "w") as fh:
        json.dump(
            {"mean": stats.mean, "std": stats.std, "split_id": stats.split_id, "n_pixels": stats.n_pixels},
            fh, indent=1, sort_keys=True,
        )
        fh.write("\n")


def read_stats(path) -> PixelStats:
    with open(path) as fh:
        d = json.load(fh)
    return PixelStats(mean=float(d["mean"]), std=float(d["std"]), split_id=str(d["split_id"]), n_pixels=int(d["n_pixels"]))


def write_pgm(path, pixels: np.ndarray) -> None:
    """8-bit min-max scaled PGM dump for eyeballing scaleograms."""
    px = np.asarray(pixels, dtype=np.float64)
    lo, hi = px.min(), px.max()
    scaled = np.zeros_like(px) if hi == lo else (px - lo) / (hi - lo)
    u8 = np.round(255.0 * scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{px.shape[1]} {px.shape[0]}\n255\n".encode())
        fh.write(u8.tobytes())
