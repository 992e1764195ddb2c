import json

import numpy as np
import pytest

from cecnet import checkpoint
from cecnet.config import RunConfig
from cecnet.errors import CheckpointError, ConfigurationError
from cecnet.harness import TrainState, make_datasets, train

SMALL = dict(widths=[4, 6, 8, 8], items_per_class=40, n_query=3)


def test_config_round_trip():
    config = RunConfig(attention="transformer", metric="cosine", loss_weights={"global": 1.0, "rotation": None})
    assert config.attention == "T"
    again = RunConfig.from_json(config.to_json())
    assert again == config and again.to_json() == config.to_json()


@pytest.mark.parametrize("bad", [
    {"n_way": 1}, {"temperature": 0}, {"attention": "Z"}, {"metric": "none"}, {"widths": [1, 2]},
    {"precision": "f16"}, {"loss_weights": {"metric": 1.0}}, {"k_shot": 0}, {"items_per_class": 5},
    {"lr": -1.0}, {"placement": "corner"}, {"catalog_version": "v0"}, {"betas": [0.9, 1.0]},
])
def test_config_rejects_invalid(bad):
    with pytest.raises(ConfigurationError):
        RunConfig(**bad)


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"n_way": 5, "mystery": 1})
    with pytest.raises(ConfigurationError):
        RunConfig.from_json("{not json")
    with pytest.raises(ConfigurationError):
        RunConfig.load(tmp_path / "missing.json")
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 4}))
    assert RunConfig.load(path).seed == 4


def fresh(**changes):
    config = RunConfig(**{**SMALL, **changes})
    return TrainState.create(config), make_datasets(config)[0]


def test_checkpoint_round_trip(tmp_path):
    state, base = fresh(attention="T", metric="G", cece=True)
    train(state, base, 3)
    path = tmp_path / "ckpt.cec1"
    checkpoint.save(path, state)
    assert path.read_bytes()[:4] == b"CEC1"
    loaded = checkpoint.load(path)
    assert loaded.step == 3 and loaded.optimizer.t == 3
    assert loaded.config == state.config
    for name, p in state.model.named_parameters().items():
        assert np.array_equal(p.data, loaded.model.named_parameters()[name].data), name
        assert np.array_equal(state.optimizer.m[name], loaded.optimizer.m[name])
    assert loaded.rng.bit_generator.state == state.rng.bit_generator.state


def test_resume_is_bit_identical(tmp_path):
    straight, base = fresh()
    train(straight, base, 10)
    path = tmp_path / "mid.cec1"
    checkpoint.save(path, straight)
    train(straight, base, 50, tmp_path / "straight.csv")
    resumed = checkpoint.load(path)
    train(resumed, make_datasets(resumed.config)[0], 50, tmp_path / "resumed.csv")
    assert (tmp_path / "straight.csv").read_bytes() == (tmp_path / "resumed.csv").read_bytes()
    for name, p in straight.model.named_parameters().items():
        assert np.array_equal(p.data, resumed.model.named_parameters()[name].data)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "missing.cec1")
    bad = tmp_path / "bad.cec1"
    bad.write_bytes(b"NOPE1234")
    with pytest.raises(CheckpointError):
        checkpoint.load(bad)
    state, _ = fresh()
    good = tmp_path / "good.cec1"
    checkpoint.save(good, state)
    data = good.read_bytes()
    (tmp_path / "short.cec1").write_bytes(data[:-5])
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "short.cec1")
    (tmp_path / "long.cec1").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "long.cec1")
    assert isinstance(CheckpointError("x"), OSError)


def test_container_tensor_layout(tmp_path):
    path = tmp_path / "t.cec1"
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(2.5)}
    checkpoint.write_container(path, {"k": 1}, arrays)
    meta, tensors = checkpoint.read_container(path)
    assert meta == {"k": 1}
    assert np.array_equal(tensors["a"], arrays["a"]) and tensors["b"].shape == ()
