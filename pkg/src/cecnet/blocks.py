"""CEC-derived modules: CECM, Self-CECM, CECD, CECE and CECC."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .element_connection import cec, relation_map
from .errors import DimensionError, ParameterError
from .patch_cluster import ClusterParams, FeatureMap, RelationMap, patch_cluster
from .tensor import Tensor


@dataclass
class EmbeddingBank:
    """Learnable semantic groups ``W_E`` of shape (n_e, c)."""

    W_E: Tensor

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator, n_e: int = 5) -> "EmbeddingBank":
        if n_e < 1:
            raise ParameterError(f"n_e must be >= 1, got {n_e}")
        bound = 1.0 / math.sqrt(channels)
        return cls(Tensor(rng.uniform(-bound, bound, (n_e, channels)), requires_grad=True))

    @property
    def n_e(self) -> int:
        return self.W_E.shape[0]


@dataclass
class ClassifierBank:
    """Learnable class rows ``W`` of shape (D, c)."""

    W: Tensor

    @classmethod
    def create(cls, channels: int, classes: int, rng: np.random.Generator) -> "ClassifierBank":
        if classes < 2:
            raise ParameterError(f"a classifier bank needs D >= 2, got {classes}")
        bound = 1.0 / math.sqrt(channels)
        return cls(Tensor(rng.uniform(-bound, bound, (classes, channels)), requires_grad=True))


def cecm(Q: FeatureMap, P: FeatureMap, params: ClusterParams) -> tuple[FeatureMap, FeatureMap]:
    """Mutual enhancement of a query/support pair; returns ``(Q_bar, P_bar)``."""
    return cec(Q, P, params), cec(P, Q, params)


def self_cecm(Q: FeatureMap, params: ClusterParams) -> FeatureMap:
    return cec(Q, Q, params)


def cecd(Qb: FeatureMap, Pb: FeatureMap, params: ClusterParams) -> RelationMap:
    """Patch-wise similarity map between ``Qb`` and the clustering of ``Pb`` around it."""
    return relation_map(Qb, patch_cluster(Qb, Pb, params), params.eps)


def _check_bank(Q: Tensor, rows: Tensor) -> None:
    if Q.shape[-1] != rows.shape[-1]:
        raise DimensionError(f"bank has {rows.shape[-1]} channels, features have {Q.shape[-1]}")


def cece(Q: FeatureMap, bank: EmbeddingBank, params: ClusterParams) -> FeatureMap:
    _check_bank(Q, bank.W_E)
    return cec(Q, bank.W_E, params)


def cecc(Q: FeatureMap, bank: ClassifierBank, params: ClusterParams) -> Tensor:
    """Per-class scores in [-1, 1]: each class row against its clustering of ``Q``."""
    _check_bank(Q, bank.W)
    return relation_map(bank.W, patch_cluster(bank.W, Q, params), params.eps)
