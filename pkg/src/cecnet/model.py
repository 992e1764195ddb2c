"""The CECNet model: encoder, attention module, metric head and auxiliary heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import EmbeddingBank, cece, cecm
from .config import RunConfig
from .element_connection import connection_weights
from .encoder import EncoderParams, encode
from .losses import TaskWeights, relation_scores
from .patch_cluster import ClusterParams, cross_attention_baseline
from .synthetic import base_classes
from .tensor import Tensor


def _uniform(rng, rows, channels):
    bound = 1.0 / math.sqrt(channels)
    return Tensor(rng.uniform(-bound, bound, (rows, channels)), requires_grad=True)


@dataclass
class CECNet:
    encoder: EncoderParams
    attention: str
    attn_params: ClusterParams | None
    metric_params: ClusterParams | None
    W_G: Tensor
    W_R: Tensor
    task: TaskWeights
    embedding: EmbeddingBank | None = None
    embed_params: ClusterParams | None = None

    @classmethod
    def create(cls, config: RunConfig, rng: np.random.Generator, n_global: int | None = None) -> "CECNet":
        encoder = EncoderParams.create(rng, config.widths)
        c = encoder.channels
        attn = metric = None
        if config.attention not in ("none", "cam"):
            attn = ClusterParams.create(config.attention, c, rng, config.temperature, config.activation)
        if config.metric != "cosine":
            metric = ClusterParams.create(config.metric, c, rng, config.temperature, config.activation)
        n_global = len(base_classes()) if n_global is None else n_global
        model = cls(encoder, config.attention, attn, metric,
                    W_G=_uniform(rng, n_global, c), W_R=_uniform(rng, 4, c),
                    task=TaskWeights.create(config.lam))
        if config.cece:
            model.embedding = EmbeddingBank.create(c, rng, config.n_e)
            model.embed_params = ClusterParams.create("M", c, rng, config.temperature)
        return model

    @property
    def channels(self) -> int:
        return self.encoder.channels

    def named_parameters(self) -> dict[str, Tensor]:
        named = {f"encoder.{k}": v for k, v in self.encoder.tensors().items()}
        if self.attn_params is not None:
            named.update({f"cecm.{k}": v for k, v in self.attn_params.tensors().items()})
        if self.metric_params is not None:
            named.update({f"cecd.{k}": v for k, v in self.metric_params.tensors().items()})
        named["W_G"] = self.W_G
        named["W_R"] = self.W_R
        named["alpha_G"] = self.task.alpha_G
        named["alpha_R"] = self.task.alpha_R
        if self.embedding is not None:
            named["cece.W_E"] = self.embedding.W_E
        return named

    def parameter_count(self) -> int:
        return int(sum(p.size for name, p in self.named_parameters().items()
                       if not name.startswith("alpha")))

    def features(self, images) -> Tensor:
        feats = encode(images, self.encoder)
        if self.embedding is not None:
            feats = cece(feats, self.embedding, self.embed_params)
        return feats

    def enhance(self, Q: Tensor, P: Tensor) -> tuple[Tensor, Tensor]:
        """Pair every query (M, m, c) with every prototype (N, m, c).

        Returns ``(Q_bar, P_bar)`` broadcastable to (M, N, m, c).
        """
        Qe, Pe = Q.expand_dims(1), P.expand_dims(0)
        if self.attention == "none":
            return Qe, Pe
        if self.attention == "cam":
            Qb = connection_weights(cross_attention_baseline(Qe, Pe)).expand_dims(-1) * Qe
            Pb = connection_weights(cross_attention_baseline(Pe, Qe)).expand_dims(-1) * Pe
            return Qb, Pb
        return cecm(Qe, Pe, self.attn_params)

    def relations(self, Qbar: Tensor, Pbar: Tensor) -> Tensor:
        """Similarity maps (M, N, m)."""
        return relation_scores(Qbar, Pbar, self.metric_params)
