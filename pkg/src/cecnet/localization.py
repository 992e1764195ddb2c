"""Relation-map localization against generator object masks."""

from __future__ import annotations

import numpy as np

from .encoder import GRID
from .errors import DimensionError


def mask_fractions(mask: np.ndarray, grid: int = GRID) -> np.ndarray:
    """Fraction of each grid cell covered by the object, shape (grid, grid)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2-D, got {mask.shape}")
    rows = np.rint(np.linspace(0, mask.shape[0], grid + 1)).astype(int)
    cols = np.rint(np.linspace(0, mask.shape[1], grid + 1)).astype(int)
    out = np.empty((grid, grid))
    for i in range(grid):
        for j in range(grid):
            out[i, j] = mask[rows[i]:rows[i + 1], cols[j]:cols[j + 1]].mean()
    return out


def inside_cells(mask: np.ndarray, grid: int = GRID) -> np.ndarray:
    """Cells counted as object: at least half covered, or the best-covered cell for tiny objects."""
    frac = mask_fractions(mask, grid)
    return (frac >= 0.5) | (frac == frac.max())


def inside_outside_means(relation, mask) -> tuple[float, float]:
    """Mean relation value over object cells and over the remaining cells."""
    relation = np.asarray(relation, dtype=np.float64).reshape(GRID, GRID)
    inside = inside_cells(mask)
    outside = ~inside
    out_mean = float(relation[outside].mean()) if outside.any() else float("nan")
    return float(relation[inside].mean()), out_mean


def upsample(relation, factor: int = 6) -> np.ndarray:
    """Nearest-neighbor enlargement of a 2-D map."""
    relation = np.asarray(relation)
    return np.repeat(np.repeat(relation, factor, axis=0), factor, axis=1)


def to_gray(relation) -> np.ndarray:
    """Map [-1, 1] to uint8 [0, 255]."""
    scaled = (np.clip(np.asarray(relation, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.rint(scaled).astype(np.uint8)


def write_pgm(path, relation, factor: int = 6) -> None:
    image = to_gray(upsample(np.asarray(relation).reshape(GRID, GRID), factor))
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5 {width} {height} 255\n".encode("ascii"))
        fh.write(image.tobytes())
