"""Four-block convolutional encoder mapping 32x32 images to 5x5 patch grids.

Block layout (3x3 kernels, relu after every convolution):

    32 -conv(valid, stride 2)-> 15 -conv(same)-> 15 -conv(same)-> 15 -pool3-> 5 -conv(same)-> 5

Pooling after the third block keeps each output patch's receptive field close
to its own grid cell, so patch features stay spatially specific.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, conv2d, max_pool2d

GRID = 5
_PADDING = (0, 1, 1, 1)
_STRIDES = (2, 1, 1, 1)
_POOLS = (None, None, 3, None)


@dataclass
class EncoderParams:
    weights: list[Tensor]
    biases: list[Tensor]

    @classmethod
    def create(cls, rng: np.random.Generator, widths=(16, 32, 32, 32), in_channels: int = 3) -> "EncoderParams":
        if len(widths) != 4:
            raise DimensionError("the encoder has exactly four blocks")
        weights, biases = [], []
        prev = in_channels
        for width in widths:
            bound = math.sqrt(6.0 / (prev * 9))  # He-uniform
            weights.append(Tensor(rng.uniform(-bound, bound, (width, 3, 3, prev)), requires_grad=True))
            biases.append(Tensor(np.zeros(width), requires_grad=True))
            prev = width
        return cls(weights, biases)

    @property
    def channels(self) -> int:
        return self.weights[-1].shape[0]

    def tensors(self) -> dict[str, Tensor]:
        named = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            named[f"conv{i}.w"] = w
            named[f"conv{i}.b"] = b
        return named


def encode(images, params: EncoderParams) -> Tensor:
    """Images (B, 3, 32, 32) -> patch features (B, 25, c), patches in row-major order."""
    x = images.data if isinstance(images, Tensor) else np.asarray(images)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[-2:] != (32, 32):
        raise DimensionError(f"encoder expects (B, 3, 32, 32) images, got {x.shape}")
    x = Tensor(np.ascontiguousarray(x.transpose(0, 2, 3, 1)))
    for w, b, pad, stride, pool in zip(params.weights, params.biases, _PADDING, _STRIDES, _POOLS):
        x = conv2d(x, w, b, padding=pad, stride=stride).relu()
        if pool:
            x = max_pool2d(x, pool)
    return x.reshape(x.shape[0], GRID * GRID, x.shape[-1])
