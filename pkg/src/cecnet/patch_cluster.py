"""Patch Cluster operators and the cross-attention baseline.

A patch cluster gathers, for every reference patch of ``Q`` (rows), a convex
(or learned) combination of the source patches of ``P``. Feature maps are
tensors shaped ``(..., rows, channels)``; leading axes broadcast, so a whole
episode of query/prototype pairs runs as one batched call.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, l2_normalize_rows, matmul, softmax_rows

FeatureMap = Tensor  # (..., rows, channels)
ClusteredPatch = Tensor  # (..., reference rows, channels)
RelationMap = Tensor  # (..., rows), entries in [-1, 1]

ACTIVATIONS = ("relu", "sigmoid")


class ClusterMode(str, enum.Enum):
    MATMUL = "M"
    COSINE = "C"
    METAGCN = "G"
    TRANSFORMER = "T"

    @classmethod
    def parse(cls, value) -> "ClusterMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "m": cls.MATMUL, "matmul": cls.MATMUL,
            "c": cls.COSINE, "cosine": cls.COSINE,
            "g": cls.METAGCN, "gcn": cls.METAGCN, "metagcn": cls.METAGCN, "meta-gcn": cls.METAGCN,
            "t": cls.TRANSFORMER, "transformer": cls.TRANSFORMER,
        }
        if key not in aliases:
            raise ConfigurationError(f"unknown patch cluster mode {value!r}")
        return aliases[key]

    @property
    def learnable(self) -> bool:
        return self in (ClusterMode.METAGCN, ClusterMode.TRANSFORMER)


@dataclass
class FFNParams:
    """Two c -> c linear layers with relu between them."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        hidden = (matmul(x, self.w1.T) + self.b1).relu()
        return matmul(hidden, self.w2.T) + self.b2


@dataclass
class ClusterParams:
    mode: ClusterMode = ClusterMode.COSINE
    temperature: float = 1.0
    activation: str = "relu"
    W: Tensor | None = None
    Wq: Tensor | None = None
    Wk: Tensor | None = None
    Wv: Tensor | None = None
    ffn: FFNParams | None = None
    eps: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        self.mode = ClusterMode.parse(self.mode)

    @classmethod
    def create(cls, mode, channels: int, rng: np.random.Generator | None = None,
               temperature: float = 1.0, activation: str = "relu") -> "ClusterParams":
        """Build params for ``mode`` with identity-plus-noise initialization."""
        mode = ClusterMode.parse(mode)
        params = cls(mode=mode, temperature=temperature, activation=activation)
        if mode.learnable and rng is None:
            raise ConfigurationError(f"mode {mode.name} needs an rng to initialize weights")

        def near_identity():
            return Tensor(np.eye(channels) + rng.uniform(-0.01, 0.01, (channels, channels)),
                          requires_grad=True)

        def uniform(*shape):
            bound = 1.0 / math.sqrt(channels)
            return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

        if mode is ClusterMode.METAGCN:
            params.W = near_identity()
        elif mode is ClusterMode.TRANSFORMER:
            params.Wq, params.Wk, params.Wv = near_identity(), near_identity(), near_identity()
            params.ffn = FFNParams(uniform(channels, channels), uniform(channels),
                                   uniform(channels, channels), uniform(channels))
        params.validate()
        return params

    def tensors(self) -> dict[str, Tensor]:
        named = {"W": self.W, "Wq": self.Wq, "Wk": self.Wk, "Wv": self.Wv}
        if self.ffn is not None:
            named.update(ffn_w1=self.ffn.w1, ffn_b1=self.ffn.b1,
                         ffn_w2=self.ffn.w2, ffn_b2=self.ffn.b2)
        return {k: v for k, v in named.items() if v is not None}

    def validate(self) -> None:
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"activation must be one of {ACTIVATIONS}")
        has_w = self.W is not None
        has_t = all(t is not None for t in (self.Wq, self.Wk, self.Wv, self.ffn))
        any_t = any(t is not None for t in (self.Wq, self.Wk, self.Wv, self.ffn))
        if self.mode is ClusterMode.METAGCN:
            if not has_w or any_t:
                raise ConfigurationError("meta-GCN mode needs W and no transformer weights")
        elif self.mode is ClusterMode.TRANSFORMER:
            if not has_t or has_w:
                raise ConfigurationError("transformer mode needs Wq, Wk, Wv and ffn, and no W")
        elif has_w or any_t:
            raise ConfigurationError(f"{self.mode.name} mode takes no learnable weights")


def _check_channels(Q: Tensor, P: Tensor) -> None:
    if Q.ndim < 2 or P.ndim < 2:
        raise DimensionError(f"feature maps must be (rows, channels), got {Q.shape} and {P.shape}")
    if Q.shape[-1] != P.shape[-1]:
        raise DimensionError(f"channel counts differ: {Q.shape[-1]} vs {P.shape[-1]}")


def cosine_affinity(Q: Tensor, P: Tensor, temperature: float = 1.0, eps: float = 1e-12) -> Tensor:
    return softmax_rows(matmul(l2_normalize_rows(Q, eps), l2_normalize_rows(P, eps).T), temperature)


def pc_matmul(Q: FeatureMap, P: FeatureMap, temperature: float = 1.0) -> ClusteredPatch:
    _check_channels(Q, P)
    return matmul(softmax_rows(matmul(Q, P.T), temperature), P)


def pc_cosine(Q: FeatureMap, P: FeatureMap, temperature: float = 1.0,
              eps: float = 1e-12) -> ClusteredPatch:
    _check_channels(Q, P)
    return matmul(cosine_affinity(Q, P, temperature, eps), P)


def pc_metagcn(Q: FeatureMap, P: FeatureMap, params: ClusterParams) -> ClusteredPatch:
    _check_channels(Q, P)
    if params.W is None:
        raise ConfigurationError("meta-GCN patch cluster needs the weight matrix W")
    mixed = matmul(matmul(cosine_affinity(Q, P, params.temperature, params.eps), P), params.W)
    return mixed.relu() if params.activation == "relu" else mixed.sigmoid()


def _transformer_affinity(Q, P, params):
    if any(t is None for t in (params.Wq, params.Wk, params.Wv, params.ffn)):
        raise ConfigurationError("transformer patch cluster needs Wq, Wk, Wv and ffn")
    keys = matmul(P, params.Wk.T)
    return softmax_rows(matmul(matmul(Q, params.Wq.T), keys.T), params.temperature)


def pc_transformer(Q: FeatureMap, P: FeatureMap, params: ClusterParams) -> ClusteredPatch:
    _check_channels(Q, P)
    pooled = matmul(_transformer_affinity(Q, P, params), matmul(P, params.Wv.T))
    return pooled + params.ffn(pooled)


def cluster_affinity(Q: FeatureMap, P: FeatureMap, params: ClusterParams) -> Tensor:
    """The (reference rows x source rows) affinity matrix used by ``params.mode``."""
    _check_channels(Q, P)
    mode = params.mode
    if mode is ClusterMode.MATMUL:
        return softmax_rows(matmul(Q, P.T), params.temperature)
    if mode is ClusterMode.TRANSFORMER:
        return _transformer_affinity(Q, P, params)
    return cosine_affinity(Q, P, params.temperature, params.eps)


def patch_cluster(Q: FeatureMap, P: FeatureMap, params: ClusterParams) -> ClusteredPatch:
    mode = params.mode
    if mode is ClusterMode.MATMUL:
        return pc_matmul(Q, P, params.temperature)
    if mode is ClusterMode.COSINE:
        return pc_cosine(Q, P, params.temperature, params.eps)
    if mode is ClusterMode.METAGCN:
        return pc_metagcn(Q, P, params)
    if mode is ClusterMode.TRANSFORMER:
        return pc_transformer(Q, P, params)
    raise ConfigurationError(f"unknown patch cluster mode {mode!r}")


def cross_attention_baseline(Q: FeatureMap, P: FeatureMap, eps: float = 1e-12) -> RelationMap:
    """Relation scores of the cross-attention baseline.

    Builds the (support x query) cosine correlation matrix and fuses it by
    averaging over support patches, giving one score per query patch.
    """
    _check_channels(Q, P)
    correlation = matmul(l2_normalize_rows(P, eps), l2_normalize_rows(Q, eps).T)
    return correlation.mean(axis=-2)
