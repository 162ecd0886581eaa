"""The two CNN variants: one conv per block (initial) or two (proposed)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError, NonFiniteError
from . import layers as L


@dataclass(frozen=True)
class ModelConfig:
    name: str = "proposed"
    convs_per_block: int = 2
    activation: str = "leaky_relu"     # or "elu"
    depths: tuple = (64, 128, 256, 640)
    pools: tuple = ((2, 2), (2, 2), (3, 3), (3, 3))
    dense_units: int = 1024
    n_classes: int = 11
    conv_dropout: float = 0.2
    dense_dropout: float = 0.5
    input_shape: tuple = (96, 87)
    leaky_alpha: float = 0.3

    def scaled(self, depths=None, dense_units=None, input_shape=None, **kw) -> ModelConfig:
        changes = dict(kw)
        if depths is not None:
            changes["depths"] = tuple(depths)
        if dense_units is not None:
            changes["dense_units"] = dense_units
        if input_shape is not None:
            changes["input_shape"] = tuple(input_shape)
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["depths"] = list(self.depths)
        out["pools"] = [list(p) for p in self.pools]
        out["input_shape"] = list(self.input_shape)
        return out

    @classmethod
    def from_json(cls, obj) -> ModelConfig:
        obj = dict(obj)
        obj["depths"] = tuple(obj["depths"])
        obj["pools"] = tuple(tuple(p) for p in obj["pools"])
        obj["input_shape"] = tuple(obj["input_shape"])
        return cls(**obj)


INITIAL = ModelConfig(name="initial", convs_per_block=1, activation="elu")
PROPOSED = ModelConfig(name="proposed", convs_per_block=2, activation="leaky_relu")
ARCHITECTURES = {"initial": INITIAL, "proposed": PROPOSED}


def _activation(config):
    if config.activation == "elu":
        return L.ELU()
    if config.activation == "leaky_relu":
        return L.LeakyReLU(config.leaky_alpha)
    raise ConfigError(f"unknown activation {config.activation!r}")


class Model:
    def __init__(self, config: ModelConfig, layers, dtype=np.float32):
        self.config = config
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self.block_shapes = []
        self.check_finite = True

    # parameters --------------------------------------------------------

    def named_params(self):
        """(key, layer, param name) in declaration order."""
        for i, layer in enumerate(self.layers):
            for pname in layer.params:
                yield f"{i}.{layer.name}.{pname}", layer, pname

    def named_buffers(self):
        for i, layer in enumerate(self.layers):
            for bname in layer.buffers:
                yield f"{i}.{layer.name}.{bname}", layer, bname

    def parameters(self) -> dict:
        return {key: layer.params[p] for key, layer, p in self.named_params()}

    def gradients(self) -> dict:
        return {key: layer.grads[p] for key, layer, p in self.named_params()}

    def state(self) -> dict:
        """Parameters and running statistics, copied."""
        out = {key: layer.params[p].copy() for key, layer, p in self.named_params()}
        out.update({key: layer.buffers[b].copy() for key, layer, b in self.named_buffers()})
        return out

    def load_state(self, state: dict):
        for key, layer, p in self.named_params():
            layer.params[p] = np.array(state[key], dtype=self.dtype)
        for key, layer, b in self.named_buffers():
            layer.buffers[b] = np.array(state[key], dtype=self.dtype)

    def param_count(self) -> int:
        return int(sum(v.size for v in self.parameters().values()))

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            for store in (layer.params, layer.buffers):
                for key in store:
                    store[key] = store[key].astype(self.dtype)
            if isinstance(layer, L.Dropout) and layer.fixed_mask is not None:
                layer.fixed_mask = layer.fixed_mask.astype(self.dtype)
        return self

    def set_rng(self, rng: np.random.Generator):
        for layer in self.layers:
            if isinstance(layer, L.Dropout):
                layer.rng = rng

    @property
    def conv_layers(self):
        return [layer for layer in self.layers if isinstance(layer, L.Conv2D)]

    # passes ------------------------------------------------------------

    def _prepare(self, batch):
        x = np.asarray(batch, dtype=self.dtype)
        if x.ndim == 3:
            x = x[..., None]
        elif x.ndim == 4 and x.shape[1] == 1 and x.shape[-1] != 1:
            x = np.moveaxis(x, 1, -1)
        expected = tuple(self.config.input_shape)
        if x.ndim != 4 or x.shape[1:3] != expected or x.shape[3] != 1:
            raise ContractError(f"expected batch of {expected} single-channel inputs, got {x.shape}")
        return x

    def forward(self, batch, train: bool = False, upto: int | None = None) -> np.ndarray:
        """Scores in (0, 1), shape (B, n_classes).

        Accepts (B, H, W), (B, 1, H, W) or (B, H, W, 1) input. With ``upto``
        the sigmoid (and anything after layer ``upto``) is skipped.
        """
        x = self._prepare(batch)
        stop = len(self.layers) if upto is None else upto
        for layer in self.layers[:stop]:
            x = layer.forward(x, train)
            if self.check_finite and not np.all(np.isfinite(x)):
                raise NonFiniteError(layer.name)
        return x

    def logits(self, batch, train=False):
        return self.forward(batch, train, upto=len(self.layers) - 1)

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Back-propagate dL/d(logits); the output sigmoid is treated as fused with the loss."""
        g = np.asarray(grad_logits, dtype=self.dtype)
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return g

    def predict(self, batch, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(batch)
        outs = [self.forward(x[i:i + batch_size], train=False)
                for i in range(0, len(x), batch_size)]
        if not outs:
            return np.zeros((0, self.config.n_classes), dtype=self.dtype)
        return np.concatenate(outs)

    def summary(self) -> str:
        lines = [f"{self.config.name}: {self.param_count()} parameters"]
        shape = tuple(self.config.input_shape) + (1,)
        for layer in self.layers:
            shape = layer.output_shape(shape)
            lines.append(f"  {layer.name:<16} -> {shape}")
        return "\n".join(lines)


def build_model(config: ModelConfig = PROPOSED, seed: int = 0, dtype=np.float32) -> Model:
    """Instantiate and initialize a model; He-normal weights, zero biases."""
    if config.convs_per_block < 1 or len(config.depths) != len(config.pools):
        raise ConfigError("each block needs a depth, a pool size and at least one conv")
    layers = []
    block_shapes = []
    shape = tuple(config.input_shape) + (1,)
    in_ch = 1
    for b, (depth, pool) in enumerate(zip(config.depths, config.pools), start=1):
        # block order: conv(s) -> batch norm -> activation -> pool -> dropout
        for c in range(config.convs_per_block):
            layers.append(L.Conv2D(in_ch, depth, name=f"conv{b}_{c + 1}"))
            in_ch = depth
        layers.append(L.BatchNorm(depth, name=f"bn{b}"))
        layers.append(_activation(config))
        layers.append(L.MaxPool(pool))
        shape = (shape[0] // pool[0], shape[1] // pool[1], depth)
        if shape[0] < 1 or shape[1] < 1:
            raise ConfigError(f"input {config.input_shape} collapses to zero size in block {b}")
        block_shapes.append(shape)
        layers.append(L.Dropout(config.conv_dropout))
    flat = int(np.prod(shape))
    layers += [L.Flatten(),
               L.Dense(flat, config.dense_units, name="dense1"),
               _activation(config),
               L.BatchNorm(config.dense_units, name="bn_dense"),
               L.Dropout(config.dense_dropout),
               L.Dense(config.dense_units, config.n_classes, name="dense2"),
               L.Sigmoid()]
    rng = np.random.default_rng(seed)
    for layer in layers:
        if hasattr(layer, "init"):
            layer.init(rng, np.dtype(dtype))
    model = Model(config, layers, dtype)
    model.block_shapes = block_shapes
    model.flat_size = flat
    model.set_rng(np.random.default_rng([seed, 1]))
    return model
