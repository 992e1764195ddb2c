"""Synthetic shape images with controllable placement.

Each class is a (shape, colour) pair drawn as a filled object at a random
position and scale over a per-image random textured background. Every image
is a pure function of ``(dataset seed, catalog version, class, index)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError

CATALOG_VERSION = "shapes-v1"
SHAPES = ("circle", "square", "triangle", "diamond", "ring", "cross")
COLORS = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.15, 0.25, 0.90),
    "yellow": (0.92, 0.85, 0.10),
    "magenta": (0.85, 0.15, 0.80),
}
PLACEMENTS = ("uniform", "centered")
SCALE_RANGE = (0.2, 0.8)


def n_classes() -> int:
    return len(SHAPES) * len(COLORS)


def class_info(class_id: int) -> tuple[str, str]:
    if not 0 <= class_id < n_classes():
        raise DataError(f"unknown class {class_id}; catalog has {n_classes()} classes")
    return SHAPES[class_id // len(COLORS)], list(COLORS)[class_id % len(COLORS)]


def novel_classes() -> list[int]:
    """Held-out classes; every shape and every colour still appears among base classes."""
    n_col = len(COLORS)
    return [c for c in range(n_classes()) if (c // n_col + c % n_col) % 3 == 0]


def base_classes() -> list[int]:
    held = set(novel_classes())
    return [c for c in range(n_classes()) if c not in held]


@dataclass
class SynthImage:
    pixels: np.ndarray  # (3, H, W) in [0, 1]
    class_id: int
    object_mask: np.ndarray  # (H, W) bool
    placement: tuple[float, float, float]  # center_x, center_y, scale
    rotation: int = 0


def shape_mask(shape: str, size: int, cx: float, cy: float, radius: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xs - cx, ys - cy
    if shape == "circle":
        return dx * dx + dy * dy <= radius * radius
    if shape == "square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= radius
    if shape == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= radius * radius) & (d2 >= (0.55 * radius) ** 2)
    if shape == "cross":
        arm = radius / 3.0
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= radius))
    if shape == "triangle":
        # apex at cy - r, base at cy + r/2: the area centroid sits on (cx, cy)
        height = 1.5 * radius
        depth = dy + radius
        return (depth >= 0) & (depth <= height) & (np.abs(dx) <= 0.75 * radius * depth / height)
    raise DataError(f"unknown shape {shape!r}")


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size] / size
    base = rng.uniform(0.2, 0.8, (3, 1, 1))
    pattern = np.zeros((3, size, size))
    for _ in range(2):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.0, 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (xs * np.cos(theta) + ys * np.sin(theta)) + phase)
        pattern += rng.uniform(0.0, 0.15, (3, 1, 1)) * wave
    noise = rng.normal(0.0, 0.06, (3, size, size))
    return base + pattern + noise


def gen_image(class_id: int, rng_seed, placement_policy: str = "uniform", size: int = 32,
              scale_range: tuple[float, float] = SCALE_RANGE) -> SynthImage:
    shape, color = class_info(class_id)
    if placement_policy not in PLACEMENTS:
        raise DataError(f"unknown placement policy {placement_policy!r}")
    rng = np.random.default_rng(rng_seed)
    scale = rng.uniform(*scale_range)
    radius = scale * size / 2.0
    if placement_policy == "centered":
        cx = cy = size / 2.0
    else:
        cx, cy = rng.uniform(radius, size - radius, 2)
    pixels = _background(rng, size)
    mask = shape_mask(shape, size, cx, cy, radius)
    tint = np.asarray(COLORS[color]) + rng.uniform(-0.05, 0.05, 3)
    pixels[:, mask] = (tint[:, None] + rng.normal(0.0, 0.03, (3, int(mask.sum()))))
    return SynthImage(np.clip(pixels, 0.0, 1.0), class_id, mask, (float(cx), float(cy), float(scale)))


def rotate_image(img: SynthImage, quarter_turns: int) -> SynthImage:
    """Rotate pixels and mask by ``quarter_turns`` x 90 degrees counter-clockwise."""
    if quarter_turns not in (0, 1, 2, 3):
        raise DataError(f"quarter_turns must be in 0..3, got {quarter_turns}")
    h, w = img.object_mask.shape
    if h != w:
        raise DimensionError(f"rotation needs a square image, got {h}x{w}")
    return SynthImage(np.rot90(img.pixels, quarter_turns, axes=(1, 2)).copy(), img.class_id,
                      np.rot90(img.object_mask, quarter_turns).copy(), img.placement,
                      (img.rotation + quarter_turns) % 4)


class SynthDataset:
    """Lazily generated items ``(class_id, index)`` for a fixed class list."""

    def __init__(self, classes, seed: int = 0, items_per_class: int = 600, image_size: int = 32,
                 placement: str = "uniform", catalog_version: str = CATALOG_VERSION,
                 cache_size: int = 20000):
        if catalog_version != CATALOG_VERSION:
            raise DataError(f"unsupported catalog version {catalog_version!r}")
        self.classes = [int(c) for c in classes]
        for c in self.classes:
            class_info(c)
        if items_per_class < 1:
            raise DataError("items_per_class must be positive")
        self.seed = int(seed)
        self.items_per_class = int(items_per_class)
        self.image_size = int(image_size)
        self.placement = placement
        self.catalog_version = catalog_version
        self.get = functools.lru_cache(maxsize=cache_size)(self._generate)

    @property
    def spec_string(self) -> str:
        return f"{self.catalog_version}:seed={self.seed}"

    def _generate(self, class_id: int, index: int) -> SynthImage:
        if not 0 <= index < self.items_per_class:
            raise DataError(f"item index {index} out of range")
        seed = np.random.SeedSequence([self.seed, class_id, index])
        return gen_image(class_id, seed, self.placement, self.image_size)

    def __len__(self):
        return len(self.classes) * self.items_per_class
