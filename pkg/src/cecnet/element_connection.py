"""Element Connection and the full CEC layer."""

from __future__ import annotations

from .errors import DimensionError
from .patch_cluster import ClusteredPatch, ClusterParams, FeatureMap, RelationMap, patch_cluster
from .tensor import l2_normalize_rows, softmax


def relation_map(Q: FeatureMap, Cp: ClusteredPatch, eps: float = 1e-12) -> RelationMap:
    """Per-patch cosine between ``Q`` and its clustered patch. Zero rows score 0."""
    if Q.shape[-2:] != Cp.shape[-2:]:
        raise DimensionError(f"relation map needs equal shapes, got {Q.shape} and {Cp.shape}")
    return (l2_normalize_rows(Q, eps) * l2_normalize_rows(Cp, eps)).sum(axis=-1)


def connection_weights(relation: RelationMap):
    """Softmax of the relation map over patch positions, plus one."""
    return softmax(relation, axis=-1) + 1.0


def element_connect(Q: FeatureMap, Cp: ClusteredPatch, eps: float = 1e-12,
                    return_relation: bool = False):
    relation = relation_map(Q, Cp, eps)
    out = connection_weights(relation).expand_dims(-1) * Q
    return (out, relation) if return_relation else out


def cec(Q: FeatureMap, P: FeatureMap, params: ClusterParams, return_relation: bool = False):
    """Highlight the patches of ``Q`` that agree with their cluster in ``P``."""
    return element_connect(Q, patch_cluster(Q, P, params), params.eps, return_relation)
