"""Layers with hand-written forward and backward passes.

Activations use NHWC layout. Every layer caches what its backward pass needs
during a training-mode forward call; ``backward`` takes dL/d(output) and
returns dL/d(input), storing parameter gradients in ``self.grads``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


class Layer:
    name = "layer"
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def output_shape(self, shape):
        return shape

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise ContractError(f"{self.name}: backward called without a training forward pass")
        return self._cache

    def descriptor(self) -> dict:
        return {"type": type(self).__name__}


def _shifted_rows(xp):
    """Flat view of a padded NHWC batch plus the row offsets of the 9 taps.

    Row p of the flat view is the top-left corner of a 3x3 window; tap k of
    that window sits at row p + offsets[k]. Rows whose window crosses an image
    edge produce garbage that the caller discards.
    """
    wp = xp.shape[2]
    flat = xp.reshape(-1, xp.shape[-1])
    offsets = [dy * wp + dx for dy in range(3) for dx in range(3)]
    return flat, offsets, flat.shape[0] - offsets[-1]


class Conv2D(Layer):
    """3x3 convolution, stride 1, zero padding 'same'.

    Computed as nine shifted matrix products over the flattened padded batch,
    which avoids materializing the 9x larger patch matrix.
    """

    def __init__(self, in_ch, out_ch, name="conv"):
        super().__init__()
        self.name = name
        self.in_ch, self.out_ch = in_ch, out_ch
        self.params["W"] = np.zeros((9 * in_ch, out_ch))
        self.params["b"] = np.zeros(out_ch)

    def output_shape(self, shape):
        return shape[:-1] + (self.out_ch,)

    def init(self, rng, dtype):
        fan_in = 9 * self.in_ch
        self.params["W"] = (rng.standard_normal((9 * self.in_ch, self.out_ch))
                            * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.params["b"] = np.zeros(self.out_ch, dtype=dtype)

    def forward(self, x, train):
        b, h, w, _ = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        flat, offsets, n = _shifted_rows(xp)
        taps = self.params["W"].reshape(9, self.in_ch, self.out_ch)
        out = np.zeros((flat.shape[0], self.out_ch), dtype=np.result_type(x, taps))
        acc = out[:n]
        for k, off in enumerate(offsets):
            acc += flat[off:off + n] @ taps[k]
        if train:
            self._cache = xp
        out = out.reshape(b, h + 2, w + 2, self.out_ch)[:, :h, :w, :]
        return out + self.params["b"]

    def backward(self, grad):
        xp = self._take_cache()
        self._cache = None
        b, h, w, _ = grad.shape
        gp = np.zeros(xp.shape[:3] + (self.out_ch,), dtype=grad.dtype)
        gp[:, :h, :w, :] = grad
        gflat = gp.reshape(-1, self.out_ch)
        flat, offsets, n = _shifted_rows(xp)
        g = gflat[:n]
        taps = self.params["W"].reshape(9, self.in_ch, self.out_ch)
        dtaps = np.empty_like(taps)
        dflat = np.zeros_like(flat)
        for k, off in enumerate(offsets):
            dtaps[k] = flat[off:off + n].T @ g
            dflat[off:off + n] += g @ taps[k].T
        self.grads["W"] = dtaps.reshape(self.params["W"].shape)
        self.grads["b"] = grad.sum(axis=(0, 1, 2))
        return dflat.reshape(xp.shape)[:, 1:-1, 1:-1, :]

    def descriptor(self):
        return {"type": "Conv2D", "in": self.in_ch, "out": self.out_ch}


class Dense(Layer):
    def __init__(self, n_in, n_out, name="dense"):
        super().__init__()
        self.name = name
        self.n_in, self.n_out = n_in, n_out
        self.params["W"] = np.zeros((n_in, n_out))
        self.params["b"] = np.zeros(n_out)

    def output_shape(self, shape):
        return (self.n_out,)

    def init(self, rng, dtype):
        self.params["W"] = (rng.standard_normal((self.n_in, self.n_out))
                            * np.sqrt(2.0 / self.n_in)).astype(dtype)
        self.params["b"] = np.zeros(self.n_out, dtype=dtype)

    def forward(self, x, train):
        if train:
            self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        x = self._take_cache()
        self._cache = None
        self.grads["W"] = x.T @ grad
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"].T

    def descriptor(self):
        return {"type": "Dense", "in": self.n_in, "out": self.n_out}


class BatchNorm(Layer):
    """Normalizes the last axis using batch statistics (train) or running ones."""

    def __init__(self, channels, eps=1e-5, momentum=0.9, name="bn"):
        super().__init__()
        self.name = name
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["mean"] = np.zeros(channels)
        self.buffers["var"] = np.ones(channels)

    def init(self, rng, dtype):
        for store in (self.params, self.buffers):
            for key in store:
                store[key] = store[key].astype(dtype)

    def forward(self, x, train):
        x2 = x.reshape(-1, self.channels)
        if train:
            mean = x2.mean(axis=0)
            centred = x2 - mean
            var = np.einsum("ij,ij->j", centred, centred) / len(x2)
            m = self.momentum
            self.buffers["mean"] = m * self.buffers["mean"] + (1 - m) * mean
            self.buffers["var"] = m * self.buffers["var"] + (1 - m) * var
        else:
            mean, var = self.buffers["mean"], self.buffers["var"]
            centred = x2 - mean
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = centred * inv
        if train:
            self._cache = (xhat, inv, x.shape)
        return (xhat * self.params["gamma"] + self.params["beta"]).reshape(x.shape)

    def backward(self, grad):
        xhat, inv, shape = self._take_cache()
        self._cache = None
        g2 = grad.reshape(-1, self.channels)
        n = len(g2)
        sum_g = g2.sum(axis=0)
        sum_gx = np.einsum("ij,ij->j", g2, xhat)
        self.grads["gamma"] = sum_gx
        self.grads["beta"] = sum_g
        gamma = self.params["gamma"]
        dx = (g2 - sum_g / n - xhat * (sum_gx / n)) * (gamma * inv)
        return dx.reshape(shape)

    def descriptor(self):
        return {"type": "BatchNorm", "channels": self.channels, "eps": self.eps,
                "momentum": self.momentum}


class ELU(Layer):
    name = "elu"

    def __init__(self, alpha=1.0):
        super().__init__()
        self.alpha = alpha

    def forward(self, x, train):
        neg = self.alpha * np.expm1(np.minimum(x, 0))
        out = np.where(x > 0, x, neg)
        if train:
            self._cache = (x > 0, neg)
        return out

    def backward(self, grad):
        pos, neg = self._take_cache()
        self._cache = None
        return grad * np.where(pos, 1.0, neg + self.alpha).astype(grad.dtype)

    def descriptor(self):
        return {"type": "ELU", "alpha": self.alpha}


class LeakyReLU(Layer):
    name = "leaky_relu"

    def __init__(self, alpha=0.3):
        super().__init__()
        self.alpha = alpha

    def forward(self, x, train):
        pos = x > 0
        if train:
            self._cache = pos
        return np.where(pos, x, self.alpha * x)

    def backward(self, grad):
        pos = self._take_cache()
        self._cache = None
        return np.where(pos, grad, self.alpha * grad)

    def descriptor(self):
        return {"type": "LeakyReLU", "alpha": self.alpha}


class MaxPool(Layer):
    """Non-overlapping (ph, pw) max pooling; trailing rows/cols are dropped."""

    def __init__(self, pool):
        super().__init__()
        self.pool = tuple(pool)
        self.name = f"maxpool{self.pool}"

    def output_shape(self, shape):
        h, w, c = shape
        return (h // self.pool[0], w // self.pool[1], c)

    def forward(self, x, train):
        ph, pw = self.pool
        b, h, w, c = x.shape
        ho, wo = h // ph, w // pw
        blocks = (x[:, :ho * ph, :wo * pw, :]
                  .reshape(b, ho, ph, wo, pw, c)
                  .transpose(0, 1, 3, 5, 2, 4)
                  .reshape(b, ho, wo, c, ph * pw))
        idx = blocks.argmax(axis=-1)
        if train:
            self._cache = (idx, x.shape)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        idx, shape = self._take_cache()
        self._cache = None
        ph, pw = self.pool
        b, h, w, c = shape
        ho, wo = grad.shape[1:3]
        routed = np.zeros((b, ho, wo, c, ph * pw), dtype=grad.dtype)
        np.put_along_axis(routed, idx[..., None], grad[..., None], axis=-1)
        dx = np.zeros(shape, dtype=grad.dtype)
        dx[:, :ho * ph, :wo * pw, :] = (routed.reshape(b, ho, wo, c, ph, pw)
                                        .transpose(0, 1, 4, 2, 5, 3)
                                        .reshape(b, ho * ph, wo * pw, c))
        return dx

    def descriptor(self):
        return {"type": "MaxPool", "pool": list(self.pool)}


class Dropout(Layer):
    """Inverted dropout; masks come from the generator handed to the model."""

    def __init__(self, rate):
        super().__init__()
        self.rate = rate
        self.name = f"dropout{rate}"
        self.rng = None
        self.fixed_mask = None

    def forward(self, x, train):
        if not train:
            return x
        if self.rate == 0:
            mask = 1.0
        elif self.fixed_mask is not None:
            mask = self.fixed_mask
        else:
            keep = self.rng.random(x.shape) >= self.rate
            mask = keep.astype(x.dtype) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, grad):
        mask = self._take_cache()
        self._cache = None
        return grad * mask

    def descriptor(self):
        return {"type": "Dropout", "rate": self.rate}


class Flatten(Layer):
    name = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        shape = self._take_cache()
        self._cache = None
        return grad.reshape(shape)


class Sigmoid(Layer):
    name = "sigmoid"

    def forward(self, x, train):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        if train:
            self._cache = out
        return out

    def backward(self, grad):
        s = self._take_cache()
        self._cache = None
        return grad * s * (1.0 - s)
