"""Training-time image augmentation.

Stages run in a fixed order (resized crop, horizontal flip, vertical
flip, rectangle erasure), each gated by its own probability, so a given
generator state always produces the same output image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..scaleogram import bilinear_resize


@dataclass(frozen=True)
class AugmentParams:
    crop_prob: float = 1.0
    crop_area_range: tuple[float, float] = (0.6, 1.0)
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    erase_prob: float = 0.5
    erase_area_range: tuple[float, float] = (0.02, 0.2)
    erase_aspect_range: tuple[float, float] = (0.3, 1.0 / 0.3)

    def __post_init__(self):
        for p in (self.crop_prob, self.hflip_prob, self.vflip_prob, self.erase_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        for lo, hi in (self.crop_area_range, self.erase_area_range, self.erase_aspect_range):
            if not 0 < lo <= hi:
                raise ValueError("ranges must be positive and ordered")
        if self.crop_area_range[1] > 1.0 or self.erase_area_range[1] > 1.0:
            raise ValueError("area fractions cannot exceed 1")


def erase_rectangle(image: np.ndarray, top: int, left: int, height: int, width: int,
                    fill: float) -> np.ndarray:
    """Copy of ``image`` with one axis-aligned rectangle set to ``fill``."""
    h, w = image.shape
    if not (0 <= top and top + height <= h and 0 <= left and left + width <= w):
        raise ValueError("rectangle out of bounds")
    out = image.copy()
    out[top:top + height, left:left + width] = fill
    return out


def _random_resized_crop(image: np.ndarray, area_range, rng) -> np.ndarray:
    h, w = image.shape
    frac = rng.uniform(*area_range)
    side = math.sqrt(frac)
    ch = max(1, round(side * h))
    cw = max(1, round(side * w))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return bilinear_resize(image[top:top + ch, left:left + cw], h, w)


def _random_erase(image: np.ndarray, params: AugmentParams, rng, fill: float) -> np.ndarray:
    h, w = image.shape
    frac = rng.uniform(*params.erase_area_range)
    log_lo, log_hi = (math.log(a) for a in params.erase_aspect_range)
    aspect = math.exp(rng.uniform(log_lo, log_hi))
    target = frac * h * w
    eh = min(h, max(1, round(math.sqrt(target * aspect))))
    ew = min(w, max(1, round(math.sqrt(target / aspect))))
    top = int(rng.integers(0, h - eh + 1))
    left = int(rng.integers(0, w - ew + 1))
    return erase_rectangle(image, top, left, eh, ew, fill)


def augment(image: np.ndarray, params: AugmentParams, rng: np.random.Generator,
            dataset_mean: float = 0.0) -> np.ndarray:
    """One augmented copy; ``dataset_mean`` fills erased rectangles."""
    out = np.asarray(image, dtype=np.float32)
    if out.ndim != 2:
        raise ValueError("expected a 2-d image")
    if rng.random() < params.crop_prob:
        out = _random_resized_crop(out, params.crop_area_range, rng)
    if rng.random() < params.hflip_prob:
        out = out[:, ::-1]
    if rng.random() < params.vflip_prob:
        out = out[::-1, :]
    if rng.random() < params.erase_prob:
        out = _random_erase(out, params, rng, dataset_mean)
    return np.ascontiguousarray(out, dtype=np.float32)
