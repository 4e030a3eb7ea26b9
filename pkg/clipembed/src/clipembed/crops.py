"""Seeded random-resized-crop geometry.

Images are center-cropped to a square before any views are taken so the
crop distribution does not depend on the source resolution. Each view's
crop is drawn from an RNG seeded by (seed, image index, view index),
making reruns reproduce files byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class CropSpec:
    n_views: int = 256
    scale_range: tuple[float, float] = (0.2, 1.0)
    aspect_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    output_side: int = 224
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi <= 1, got {self.scale_range}")
        a_lo, a_hi = self.aspect_range
        if not 0.0 < a_lo <= a_hi:
            raise ValueError(f"invalid aspect_range {self.aspect_range}")
        if self.n_views < 1:
            raise ValueError(f"n_views must be >= 1, got {self.n_views}")
        if self.output_side < 1:
            raise ValueError(f"output_side must be >= 1, got {self.output_side}")


def center_square(image: Image.Image) -> Image.Image:
    w, h = image.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    return image.crop((left, top, left + side, top + side))


def view_rng(seed: int, image_index: int, view_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(image_index, view_index))
    return np.random.default_rng(ss)


def sample_crop_box(rng: np.random.Generator, side: int, spec: CropSpec):
    """One crop rectangle inside a side x side square; falls back to the
    full frame when ten aspect/scale draws do not fit."""
    area = side * side
    log_lo, log_hi = math.log(spec.aspect_range[0]), math.log(spec.aspect_range[1])
    for _ in range(10):
        target = area * rng.uniform(spec.scale_range[0], spec.scale_range[1])
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        w = int(round(math.sqrt(target * aspect)))
        h = int(round(math.sqrt(target / aspect)))
        if 0 < w <= side and 0 < h <= side:
            left = int(rng.integers(0, side - w + 1))
            top = int(rng.integers(0, side - h + 1))
            return left, top, w, h
    return 0, 0, side, side


def crop_views(image: Image.Image, image_index: int, spec: CropSpec) -> list[Image.Image]:
    """The resized original followed by n_views random crops."""
    square = center_square(image.convert("RGB"))
    side = square.size[0]
    out_size = (spec.output_side, spec.output_side)
    frames = [square.resize(out_size, Image.BILINEAR)]
    for view_index in range(spec.n_views):
        rng = view_rng(spec.seed, image_index, view_index)
        left, top, w, h = sample_crop_box(rng, side, spec)
        crop = square.crop((left, top, left + w, top + h))
        frames.append(crop.resize(out_size, Image.BILINEAR))
    return frames
