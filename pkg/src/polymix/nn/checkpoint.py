"""Binary checkpoints.

Layout (little-endian)::

    b"PMXM" | u16 version | u32 n | n bytes of JSON descriptor
    tensors in declaration order: u8 ndim | ndim x u32 dims | float32 data
    u8 has_adam | [u64 step | m and v tensors for every parameter, same encoding]

The JSON descriptor carries the model config, the layer list and the tensor
keys, so a file can be rebuilt into a model without outside information.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import CorruptStoreError
from .model import Model, ModelConfig, build_model
from .optim import AdamState

MAGIC = b"PMXM"
VERSION = 1


def _write_tensor(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise CorruptStoreError("checkpoint truncated")
    return data


def _read_tensor(fh, expect_shape=None):
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    if expect_shape is not None and tuple(shape) != tuple(expect_shape):
        raise CorruptStoreError(f"tensor shape {shape} does not match expected {expect_shape}")
    count = int(np.prod(shape)) if ndim else 1
    return np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape).copy()


def save_checkpoint(path, model: Model, adam: AdamState | None = None, extra: dict | None = None):
    params = list(model.named_params())
    buffers = list(model.named_buffers())
    desc = {
        "config": model.config.to_json(),
        "layers": [layer.descriptor() for layer in model.layers],
        "params": [key for key, _, _ in params],
        "buffers": [key for key, _, _ in buffers],
        "extra": extra or {},
    }
    blob = json.dumps(desc, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        for _, layer, p in params:
            _write_tensor(fh, layer.params[p])
        for _, layer, b in buffers:
            _write_tensor(fh, layer.buffers[b])
        fh.write(struct.pack("<B", 1 if adam is not None else 0))
        if adam is not None:
            fh.write(struct.pack("<Q", adam.step))
            for key, layer, p in params:
                zeros = np.zeros_like(layer.params[p])
                _write_tensor(fh, adam.m.get(key, zeros))
                _write_tensor(fh, adam.v.get(key, zeros))


def load_checkpoint(path, dtype=np.float32):
    """Returns ``(model, adam_state_or_None, extra)``."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CorruptStoreError(f"{path}: not a checkpoint (bad magic)")
        version, n = struct.unpack("<HI", _read_exact(fh, 6))
        if version != VERSION:
            raise CorruptStoreError(f"{path}: unsupported checkpoint version {version}")
        try:
            desc = json.loads(_read_exact(fh, n))
            config = ModelConfig.from_json(desc["config"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptStoreError(f"{path}: bad descriptor: {exc}") from exc
        model = build_model(config, seed=0, dtype=dtype)
        layers = [layer.descriptor() for layer in model.layers]
        if layers != desc["layers"]:
            raise CorruptStoreError(f"{path}: layer list does not match its config")
        params = list(model.named_params())
        buffers = list(model.named_buffers())
        state = {}
        for key, layer, p in params:
            state[key] = _read_tensor(fh, layer.params[p].shape)
        for key, layer, b in buffers:
            state[key] = _read_tensor(fh, layer.buffers[b].shape)
        model.load_state(state)
        (has_adam,) = struct.unpack("<B", _read_exact(fh, 1))
        adam = None
        if has_adam:
            adam = AdamState()
            (adam.step,) = struct.unpack("<Q", _read_exact(fh, 8))
            for key, layer, p in params:
                adam.m[key] = _read_tensor(fh, layer.params[p].shape).astype(dtype)
                adam.v[key] = _read_tensor(fh, layer.params[p].shape).astype(dtype)
        if fh.read(1):
            raise CorruptStoreError(f"{path}: trailing bytes after checkpoint")
    return model, adam, desc.get("extra", {})
