"""Run configuration: a flat JSON document validated before any compute."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .patch_cluster import ACTIVATIONS, ClusterMode
from .synthetic import CATALOG_VERSION, PLACEMENTS

ATTENTIONS = ("none", "cam", "M", "C", "G", "T")
METRICS = ("cosine", "M", "C", "G", "T")


def _mode_letter(value, allowed, what):
    if value in allowed:
        return value
    if isinstance(value, str) and value.lower() in allowed:
        return value.lower()
    try:
        letter = ClusterMode.parse(value).value
    except ConfigurationError:
        raise ConfigurationError(f"{what} must be one of {allowed}, got {value!r}") from None
    if letter not in allowed:
        raise ConfigurationError(f"{what} must be one of {allowed}, got {value!r}")
    return letter


@dataclass
class RunConfig:
    # dataset
    dataset_seed: int = 0
    catalog_version: str = CATALOG_VERSION
    items_per_class: int = 600
    placement: str = "uniform"
    # episodes
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 15
    n_query_train: int = 1
    train_episodes: int = 3000
    eval_episodes: int = 500
    # model
    widths: list = field(default_factory=lambda: [8, 16, 32, 32])
    attention: str = "M"
    metric: str = "C"
    temperature: float = 1.0
    activation: str = "relu"
    cece: bool = False
    n_e: int = 5
    # loss
    lam: float = 1.0
    loss_weights: object = "learnable"
    # optimization
    lr: float = 1e-3
    betas: list = field(default_factory=lambda: [0.9, 0.999])
    finetune_lr: float = 1e-2
    finetune_steps: int = 50
    precision: str = "f64"
    # run
    seed: int = 0
    out_dir: str = "runs/default"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def positive_int(name, minimum=1):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
                raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")

        for name in ("n_way", "k_shot", "n_query", "n_query_train", "items_per_class",
                     "n_e", "workers"):
            positive_int(name)
        for name in ("train_episodes", "eval_episodes", "finetune_steps", "dataset_seed", "seed"):
            positive_int(name, 0)
        if self.n_way < 2:
            raise ConfigurationError("n_way must be at least 2")
        if self.k_shot + max(self.n_query, self.n_query_train) > self.items_per_class:
            raise ConfigurationError("items_per_class too small for k_shot + n_query")
        if self.catalog_version != CATALOG_VERSION:
            raise ConfigurationError(f"unsupported catalog_version {self.catalog_version!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigurationError(f"placement must be one of {PLACEMENTS}")
        self.attention = _mode_letter(self.attention, ATTENTIONS, "attention")
        self.metric = _mode_letter(self.metric, METRICS, "metric")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"activation must be one of {ACTIVATIONS}")
        if not isinstance(self.widths, (list, tuple)) or len(self.widths) != 4 or \
                not all(isinstance(w, int) and w >= 1 for w in self.widths):
            raise ConfigurationError("widths must list four positive channel counts")
        self.widths = list(self.widths)
        for name in ("temperature", "lr", "finetune_lr"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
                raise ConfigurationError(f"{name} must be a positive number, got {value!r}")
        if not isinstance(self.lam, (int, float)) or self.lam < 0:
            raise ConfigurationError("lam must be a non-negative number")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigurationError("betas must be two numbers in [0, 1)")
        self.betas = [float(b) for b in self.betas]
        if self.loss_weights != "learnable":
            if not isinstance(self.loss_weights, dict) or \
                    set(self.loss_weights) - {"global", "rotation"}:
                raise ConfigurationError(
                    'loss_weights must be "learnable" or {"global": w|null, "rotation": w|null}')
            for value in self.loss_weights.values():
                if value is not None and (not isinstance(value, (int, float)) or value < 0):
                    raise ConfigurationError("fixed loss weights must be non-negative or null")
        if self.precision not in ("f32", "f64"):
            raise ConfigurationError("precision must be f32 or f64")
        if not isinstance(self.cece, bool):
            raise ConfigurationError("cece must be true or false")

    @property
    def learnable_weights(self) -> bool:
        return self.loss_weights == "learnable"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("configuration must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(fh.read())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)
