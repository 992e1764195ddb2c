"""Episodic pipeline: sampling, base training, novel fine-tuning, inference, evaluation."""

from __future__ import annotations

import concurrent.futures
import csv
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .blocks import self_cecm
from .element_connection import relation_map
from .config import RunConfig
from .errors import DataError, TrainingError
from .losses import (LabelBundle, aux_losses, class_probabilities, fixed_weight_loss,
                     linear_logits, metric_loss, multitask_loss, pce_loss)
from .model import CECNet
from .optim import Adam
from .patch_cluster import ClusterParams, FFNParams, patch_cluster
from .synthetic import SynthDataset, SynthImage, base_classes, novel_classes, rotate_image
from .tensor import Tensor, backward, no_grad, set_precision, softmax, stack

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "loss_total", "loss_M", "loss_G", "loss_R", "alpha_G", "alpha_R")


@dataclass
class Episode:
    n_ways: int
    k_shots: int
    support: list[list[SynthImage]]
    queries: list[SynthImage]
    labels: LabelBundle
    classes: list[int]

    @property
    def n_s(self) -> int:
        return self.n_ways * self.k_shots

    def support_images(self) -> list[SynthImage]:
        return [img for row in self.support for img in row]


def make_datasets(config: RunConfig) -> tuple[SynthDataset, SynthDataset]:
    kwargs = dict(seed=config.dataset_seed, items_per_class=config.items_per_class,
                  placement=config.placement, catalog_version=config.catalog_version)
    return SynthDataset(base_classes(), **kwargs), SynthDataset(novel_classes(), **kwargs)


def sample_episode(dataset: SynthDataset, n_ways: int, k_shots: int, n_query: int,
                   rng: np.random.Generator) -> Episode:
    """Uniformly sample ``n_ways`` classes, then ``k_shots + n_query`` distinct items per class.

    ``n_query`` counts queries per class. Global labels index ``dataset.classes``.
    """
    if len(dataset.classes) < n_ways:
        raise DataError(f"dataset has {len(dataset.classes)} classes, episode needs {n_ways}")
    if dataset.items_per_class < k_shots + n_query:
        raise DataError(f"each class needs {k_shots + n_query} items, "
                        f"dataset has {dataset.items_per_class}")
    chosen = rng.choice(len(dataset.classes), n_ways, replace=False)
    support, queries, fewshot, global_ = [], [], [], []
    for way, class_index in enumerate(chosen):
        class_id = dataset.classes[class_index]
        items = rng.choice(dataset.items_per_class, k_shots + n_query, replace=False)
        support.append([dataset.get(class_id, int(i)) for i in items[:k_shots]])
        queries.extend(dataset.get(class_id, int(i)) for i in items[k_shots:])
        fewshot += [way] * n_query
        global_ += [int(class_index)] * n_query
    labels = LabelBundle(fewshot, global_, np.zeros(len(queries), dtype=np.int64))
    return Episode(n_ways, k_shots, support, queries, labels,
                   [dataset.classes[i] for i in chosen])


def rotate_queries(queries: list[SynthImage], labels: LabelBundle) -> tuple[list[SynthImage], LabelBundle]:
    """Expand each query into its four quarter-turn rotations (query-major order)."""
    rotated = [rotate_image(img, r) for img in queries for r in range(4)]
    return rotated, LabelBundle(np.repeat(labels.fewshot, 4), np.repeat(labels.global_, 4),
                                np.tile(np.arange(4), len(queries)))


def compute_prototypes(support_features) -> Tensor:
    """Class means of support features (N, K, m, c) -> (N, m, c)."""
    if isinstance(support_features, (list, tuple)):
        support_features = stack([stack(row) for row in support_features])
    return support_features.mean(axis=1)


def pixels(images: list[SynthImage]) -> np.ndarray:
    return np.stack([img.pixels for img in images])


def _select_class(Qbar: Tensor, labels: np.ndarray) -> Tensor:
    if Qbar.shape[1] == 1:
        return Qbar[:, 0]
    return Qbar[np.arange(Qbar.shape[0]), labels]


# -- base training ---------------------------------------------------------

@dataclass
class TrainState:
    config: RunConfig
    model: CECNet
    optimizer: Adam
    step: int
    rng: np.random.Generator

    @classmethod
    def create(cls, config: RunConfig) -> "TrainState":
        set_precision(config.precision)
        rng = np.random.default_rng(config.seed)
        model = CECNet.create(config, rng)
        optimizer = Adam(model.named_parameters(), config.lr, tuple(config.betas))
        return cls(config, model, optimizer, 0, rng)


def episode_losses(model: CECNet, episode: Episode, config: RunConfig) -> dict[str, Tensor]:
    queries, labels = rotate_queries(episode.queries, episode.labels)
    support = episode.support_images()
    feats = model.features(pixels(support + queries))
    n_s = len(support)
    m, c = feats.shape[1:]
    prototypes = compute_prototypes(feats[:n_s].reshape(episode.n_ways, episode.k_shots, m, c))
    Qbar, Pbar = model.enhance(feats[n_s:], prototypes)
    probs = class_probabilities(model.relations(Qbar, Pbar))
    L_M = metric_loss(probs, labels.fewshot)
    L_G, L_R = aux_losses(_select_class(Qbar, labels.fewshot), labels, model.W_G, model.W_R)
    if config.learnable_weights:
        total = multitask_loss(L_M, L_G, L_R, model.task)
    else:
        weights = config.loss_weights
        total = fixed_weight_loss(L_M, L_G, L_R, weights.get("global"), weights.get("rotation"))
    return {"total": total, "M": L_M, "G": L_G, "R": L_R}


def base_train_step(state: TrainState, episode: Episode) -> tuple[TrainState, dict[str, float]]:
    """One optimizer update on the episode's multi-task loss. Mutates and returns ``state``."""
    state.optimizer.zero_grad()
    losses = episode_losses(state.model, episode, state.config)
    total = losses["total"]
    if not np.all(np.isfinite(total.data)):
        raise TrainingError(f"non-finite loss at step {state.step}", state)
    backward(total)
    state.optimizer.step()
    state.step += 1
    breakdown = {
        "step": state.step,
        "loss_total": total.item(),
        "loss_M": losses["M"].item(),
        "loss_G": losses["G"].item(),
        "loss_R": losses["R"].item(),
        "alpha_G": state.model.task.alpha_G.item(),
        "alpha_R": state.model.task.alpha_R.item(),
    }
    return state, breakdown


def _format(value) -> str:
    return str(value) if isinstance(value, int) else repr(float(value))


def train(state: TrainState, dataset: SynthDataset, episodes: int, metrics_path=None) -> TrainState:
    """Run ``episodes`` base-training steps, appending one CSV row per step."""
    config = state.config
    writer = fh = None
    if metrics_path is not None:
        new = not os.path.exists(metrics_path) or os.path.getsize(metrics_path) == 0
        fh = open(metrics_path, "a", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(METRICS_HEADER)
    try:
        for _ in range(episodes):
            episode = sample_episode(dataset, config.n_way, config.k_shot, config.n_query_train, state.rng)
            state, row = base_train_step(state, episode)
            if writer is not None:
                writer.writerow([_format(row[k]) for k in METRICS_HEADER])
            if state.step % 500 == 0:
                log.info("step %d loss %.4f", state.step, row["loss_total"])
    finally:
        if fh is not None:
            fh.close()
    return state


# -- novel fine-tuning and inference ----------------------------------------

@dataclass
class FinetuneHead:
    cluster: ClusterParams
    W_F: Tensor

    def tensors(self) -> dict[str, Tensor]:
        named = {f"scecm.{k}": v for k, v in self.cluster.tensors().items()}
        named["W_F"] = self.W_F
        return named

    def enhance(self, features: Tensor) -> Tensor:
        return self_cecm(features, self.cluster)

    def logits(self, features: Tensor) -> Tensor:
        """Patch-wise logits (B, m, N)."""
        return linear_logits(self.enhance(features), self.W_F)


def _copy_cluster(params: ClusterParams | None, channels: int, temperature: float) -> ClusterParams:
    if params is None:
        return ClusterParams.create("M", channels, temperature=temperature)

    def fresh(t):
        return None if t is None else Tensor(t.data.copy(), requires_grad=True)

    ffn = None
    if params.ffn is not None:
        ffn = FFNParams(fresh(params.ffn.w1), fresh(params.ffn.b1), fresh(params.ffn.w2), fresh(params.ffn.b2))
    return ClusterParams(params.mode, params.temperature, params.activation, W=fresh(params.W),
                         Wq=fresh(params.Wq), Wk=fresh(params.Wk), Wv=fresh(params.Wv), ffn=ffn)


def init_head(state: TrainState, n_ways: int, rng: np.random.Generator) -> FinetuneHead:
    c = state.model.channels
    cluster = _copy_cluster(state.model.attn_params, c, state.config.temperature)
    bound = 1.0 / math.sqrt(c)
    return FinetuneHead(cluster, Tensor(rng.uniform(-bound, bound, (n_ways, c)), requires_grad=True))


def novel_finetune(state: TrainState, episode: Episode, steps: int | None = None,
                   lr: float | None = None, rng: np.random.Generator | None = None) -> FinetuneHead:
    """Train Self-CECM + linear head on the support set with the encoder frozen."""
    config = state.config
    steps = config.finetune_steps if steps is None else steps
    lr = config.finetune_lr if lr is None else lr
    rng = np.random.default_rng(config.seed) if rng is None else rng
    head = init_head(state, episode.n_ways, rng)
    with no_grad():
        feats = state.model.features(pixels(episode.support_images()))
    labels = np.repeat(np.arange(episode.n_ways), episode.k_shots)
    static = not head.cluster.tensors()
    if static:
        with no_grad():
            enhanced = head.enhance(feats)
    optimizer = Adam(head.tensors(), lr, tuple(config.betas))
    for step in range(steps):
        optimizer.zero_grad()
        logits = linear_logits(enhanced, head.W_F) if static else head.logits(feats)
        loss = pce_loss(logits, labels)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite fine-tune loss at step {step}", state)
        backward(loss)
        optimizer.step()
    return head


@dataclass
class Inference:
    predictions: np.ndarray
    Y_M: np.ndarray
    Y_F: np.ndarray | None
    Y: np.ndarray
    relations: np.ndarray  # (queries, N, m) metric similarity maps


def infer(state: TrainState, head: FinetuneHead | None, episode: Episode) -> Inference:
    """Y = Y_M + Y_F; both terms are class-probability vectors averaged over patches."""
    model = state.model
    with no_grad():
        support = episode.support_images()
        feats = model.features(pixels(support + episode.queries))
        n_s = len(support)
        m, c = feats.shape[1:]
        prototypes = compute_prototypes(feats[:n_s].reshape(episode.n_ways, episode.k_shots, m, c))
        queries = feats[n_s:]
        Qbar, Pbar = model.enhance(queries, prototypes)
        relations = model.relations(Qbar, Pbar)
        Y_M = class_probabilities(relations).mean(axis=1).data
        Y_F = None
        Y = Y_M
        if head is not None:
            Y_F = softmax(head.logits(queries).mean(axis=1), axis=-1).data
            Y = Y_M + Y_F
    return Inference(np.argmax(Y, axis=-1), Y_M, Y_F, Y, relations.data)


# -- evaluation ------------------------------------------------------------

def accuracy_summary(accuracies) -> tuple[float, float]:
    """Mean accuracy and 95% confidence half-width (1.96 standard errors)."""
    accs = np.asarray(accuracies, dtype=np.float64)
    if accs.size == 0:
        raise DataError("no episodes to summarize")
    return float(accs.mean()), float(1.96 * accs.std() / math.sqrt(accs.size))


@dataclass
class EvalReport:
    episodes: int
    metric_accs: np.ndarray
    combined_accs: np.ndarray | None = None

    @property
    def metric(self) -> tuple[float, float]:
        return accuracy_summary(self.metric_accs)

    @property
    def combined(self) -> tuple[float, float] | None:
        return None if self.combined_accs is None else accuracy_summary(self.combined_accs)


def evaluate(state: TrainState, dataset: SynthDataset, episodes: int, n_way: int, k_shot: int,
             n_query: int | None = None, seed: int = 0, finetune: bool = False,
             workers: int = 1) -> EvalReport:
    """Accuracy (%) over independently seeded episodes; order of execution is irrelevant."""
    if episodes < 1:
        raise DataError("episodes must be >= 1")
    n_query = state.config.n_query if n_query is None else n_query
    streams = np.random.SeedSequence(seed).spawn(episodes)

    def run(stream):
        rng = np.random.default_rng(stream)
        episode = sample_episode(dataset, n_way, k_shot, n_query, rng)
        head = novel_finetune(state, episode, rng=rng) if finetune else None
        result = infer(state, head, episode)
        truth = episode.labels.fewshot
        metric_acc = 100.0 * np.mean(np.argmax(result.Y_M, axis=-1) == truth)
        combined_acc = 100.0 * np.mean(result.predictions == truth)
        return metric_acc, combined_acc

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, streams))
    else:
        results = [run(s) for s in streams]
    metric = np.array([r[0] for r in results])
    combined = np.array([r[1] for r in results]) if finetune else None
    return EvalReport(episodes, metric, combined)


def query_relation_maps(state: TrainState, episode: Episode) -> np.ndarray:
    """R^Q of every query against its true-class prototype, shape (queries, m).

    With a CEC attention module this is the element-connection relation map of
    CECM; otherwise the metric head's similarity map for the true class.
    """
    model = state.model
    truth = episode.labels.fewshot
    with no_grad():
        support = episode.support_images()
        feats = model.features(pixels(support + episode.queries))
        n_s = len(support)
        m, c = feats.shape[1:]
        prototypes = compute_prototypes(feats[:n_s].reshape(episode.n_ways, episode.k_shots, m, c))
        queries = feats[n_s:]
        if model.attn_params is not None:
            matched = prototypes[truth]
            return relation_map(queries, patch_cluster(queries, matched, model.attn_params)).data
        relations = model.relations(*model.enhance(queries, prototypes)).data
    return relations[np.arange(len(truth)), truth]
