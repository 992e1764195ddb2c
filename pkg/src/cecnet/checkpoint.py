"""CEC1 checkpoint container.

Layout, all integers little-endian::

    b"CEC1"  u32 version
    u32 meta_len   meta_len bytes of UTF-8 JSON (config, step, optimizer step, rng state)
    u32 count
    count x [u32 name_len, name (UTF-8), u32 ndim, ndim x u64 dim, prod(dims) x f64]
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import RunConfig
from .errors import CheckpointError, ConfigurationError
from .tensor import get_dtype

MAGIC = b"CEC1"
VERSION = 1


def write_container(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        raw = name.encode("utf-8")
        array = np.asarray(array, dtype="<f8")
        chunks += [struct.pack("<I", len(raw)), raw, struct.pack("<I", array.ndim)]
        chunks += [struct.pack(f"<{array.ndim}Q", *array.shape), array.tobytes(order="C")]
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"checkpoint {path} is truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError(f"{path} is not a CEC1 checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(view):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return meta, tensors


def save(path, state) -> None:
    params = state.model.named_parameters()
    opt = state.optimizer
    tensors = {f"param/{k}": v.data for k, v in params.items()}
    tensors.update({f"adam.m/{k}": v for k, v in opt.m.items()})
    tensors.update({f"adam.v/{k}": v for k, v in opt.v.items()})
    meta = {
        "format": "cecnet-train-state",
        "config": state.config.to_dict(),
        "step": state.step,
        "adam_t": opt.t,
        "rng": state.rng.bit_generator.state,
    }
    write_container(path, meta, tensors)


def load(path):
    from .harness import TrainState

    meta, tensors = read_container(path)
    try:
        config = RunConfig.from_dict(meta["config"])
    except (KeyError, ConfigurationError) as exc:
        raise CheckpointError(f"checkpoint {path} carries an invalid config: {exc}") from None
    state = TrainState.create(config)
    dtype = get_dtype()
    opt = state.optimizer
    for name, param in state.model.named_parameters().items():
        for prefix, target in (("param/", None), ("adam.m/", opt.m), ("adam.v/", opt.v)):
            key = prefix + name
            if key not in tensors:
                raise CheckpointError(f"checkpoint {path} lacks tensor {key}")
            array = tensors[key]
            if array.shape != param.shape:
                raise CheckpointError(f"tensor {key} has shape {array.shape}, expected {param.shape}")
            if target is None:
                param.data = array.astype(dtype)
            else:
                target[name] = array.astype(dtype)
    opt.t = int(meta["adam_t"])
    state.step = int(meta["step"])
    state.rng.bit_generator.state = meta["rng"]
    return state
