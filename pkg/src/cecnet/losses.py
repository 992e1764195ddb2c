"""Patch-wise metric head, patch-wise cross-entropy and the multi-task loss.

Reduction convention for every loss here: sum over patches, mean over the
query batch.
"""

from __future__ import annotations

import collections
import logging
from dataclasses import dataclass

import numpy as np

from .blocks import cecd
from .errors import DataError, DimensionError, ParameterError
from .patch_cluster import ClusterParams
from .tensor import Tensor, l2_normalize_rows, log_softmax, matmul, softmax, stack

log = logging.getLogger(__name__)

#: counts of numerical guards that fired, e.g. clamped zero probabilities
warning_counts: collections.Counter = collections.Counter()

PROB_FLOOR = 1e-12


@dataclass
class LabelBundle:
    """Per-query labels; all ids are 0-based."""

    fewshot: np.ndarray
    global_: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        self.fewshot = np.asarray(self.fewshot, dtype=np.int64)
        self.global_ = np.asarray(self.global_, dtype=np.int64)
        self.rotation = np.asarray(self.rotation, dtype=np.int64)
        if not (len(self.fewshot) == len(self.global_) == len(self.rotation)):
            raise DataError("label channels have different lengths")

    def __len__(self):
        return len(self.fewshot)

    def validate(self, n_ways: int, n_global: int) -> None:
        _check_labels(self.fewshot, n_ways)
        _check_labels(self.global_, n_global)
        _check_labels(self.rotation, 4)


@dataclass
class TaskWeights:
    """Balance ``lam`` plus learnable ``alpha`` per auxiliary task; w = 1 / (2 alpha^2)."""

    lam: float
    alpha_G: Tensor
    alpha_R: Tensor

    @classmethod
    def create(cls, lam: float = 1.0, alpha: float = 1.0) -> "TaskWeights":
        return cls(lam, Tensor(alpha, requires_grad=True), Tensor(alpha, requires_grad=True))

    def coefficient(self, alpha: Tensor) -> Tensor:
        if float(alpha.data) == 0.0:
            raise ParameterError("alpha must be nonzero")
        return self.lam + 1.0 / (2.0 * alpha * alpha)


def _check_labels(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    return labels


def cosine_to_prototype(Qbars: Tensor, Pbars: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-patch cosine between each query patch and the spatially pooled prototype."""
    pooled = Pbars.mean(axis=-2, keepdims=True)
    return (l2_normalize_rows(Qbars, eps) * l2_normalize_rows(pooled, eps)).sum(axis=-1)


def relation_scores(Qbars, Pbars, params: ClusterParams | None) -> Tensor:
    """Similarity maps ``R^k``, shape (..., N, m).

    Class axis is -3 of the inputs. ``params=None`` selects the plain cosine
    metric against the pooled prototype; otherwise CECD with ``params.mode``.
    """
    if isinstance(Qbars, (list, tuple)):
        Qbars = stack(Qbars, axis=-3)
    if isinstance(Pbars, (list, tuple)):
        Pbars = stack(Pbars, axis=-3)
    if Qbars.ndim < 3 or Pbars.ndim < 3:
        raise DimensionError("class features need a class axis at -3")
    classes = max(Qbars.shape[-3], Pbars.shape[-3])
    if classes < 2:
        raise DimensionError("metric prediction needs at least two classes on axis -3")
    if Qbars.shape[-1] != Pbars.shape[-1] or Qbars.shape[-3] not in (1, classes) \
            or Pbars.shape[-3] not in (1, classes):
        raise DimensionError(f"inconsistent class features: {Qbars.shape} vs {Pbars.shape}")
    if params is None:
        return cosine_to_prototype(Qbars, Pbars)
    return cecd(Qbars, Pbars, params)


def class_probabilities(relations: Tensor) -> Tensor:
    """Softmax over classes per patch: (..., N, m) -> (..., m, N)."""
    return softmax(relations.swapaxes(-1, -2), axis=-1)


def metric_predict(Qbars, Pbars, params: ClusterParams | None) -> Tensor:
    """Per-patch class probabilities, shape (..., m, N)."""
    return class_probabilities(relation_scores(Qbars, Pbars, params))


def pce_loss(logits: Tensor, labels) -> Tensor:
    """Patch-wise cross-entropy for logits (q, m, C) and one label per query."""
    if logits.ndim != 3:
        raise DimensionError(f"pce_loss expects (queries, patches, classes), got {logits.shape}")
    q, _, classes = logits.shape
    labels = _check_labels(labels, classes)
    if labels.shape != (q,):
        raise DimensionError(f"expected {q} labels, got shape {labels.shape}")
    picked = log_softmax(logits, axis=-1)[np.arange(q), :, labels]
    return -picked.sum() * (1.0 / q)


def metric_loss(probs: Tensor, fewshot_labels) -> Tensor:
    """Negative log-likelihood of the true class, probs shaped (q, m, N)."""
    if probs.ndim != 3:
        raise DimensionError(f"metric_loss expects (queries, patches, classes), got {probs.shape}")
    q, _, classes = probs.shape
    labels = _check_labels(fewshot_labels, classes)
    picked = probs[np.arange(q), :, labels]
    clamped = int((picked.data < PROB_FLOOR).sum())
    if clamped:
        warning_counts["metric_loss_clamp"] += clamped
        log.warning("metric_loss clamped %d zero probabilities", clamped)
    return -picked.clip_min(PROB_FLOOR).log().sum() * (1.0 / q)


def linear_logits(features: Tensor, weight: Tensor) -> Tensor:
    """Patch-wise fully connected layer without bias: (q, m, c) x (C, c)^T."""
    return matmul(features, weight.T)


def aux_losses(Qbar: Tensor, labels: LabelBundle, W_G: Tensor, W_R: Tensor) -> tuple[Tensor, Tensor]:
    """Global-class and rotation patch-wise cross-entropies."""
    return (pce_loss(linear_logits(Qbar, W_G), labels.global_),
            pce_loss(linear_logits(Qbar, W_R), labels.rotation))


def multitask_loss(L_M: Tensor, L_G: Tensor, L_R: Tensor, tw: TaskWeights) -> Tensor:
    """Half the metric loss plus uncertainty-weighted auxiliary terms."""
    total = 0.5 * L_M
    for loss, alpha in ((L_G, tw.alpha_G), (L_R, tw.alpha_R)):
        coef = tw.coefficient(alpha)
        if not float(coef.data) > 0:
            raise ParameterError(f"lambda + w must be positive, got {float(coef.data)}")
        total = total + coef * loss - coef.log()
    return total


def fixed_weight_loss(L_M: Tensor, L_G: Tensor, L_R: Tensor,
                      global_weight: float | None, rotation_weight: float | None) -> Tensor:
    """Half the metric loss plus fixed-weight auxiliary terms; ``None`` drops a task."""
    total = 0.5 * L_M
    if global_weight is not None:
        total = total + global_weight * L_G
    if rotation_weight is not None:
        total = total + rotation_weight * L_R
    return total
