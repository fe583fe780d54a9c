"""Layer objects wrapping the kernels in :mod:`ldedfusion.nn.functional`."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import functional as F

KIND_IDS = {"conv2d": 1, "maxpool2d": 2, "relu": 3, "flatten": 4, "dense": 5, "softmax": 6}
KIND_NAMES = {v: k for k, v in KIND_IDS.items()}


@dataclass
class Param:
    data: np.ndarray
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


class Layer:
    kind = ""
    params: List[Param] = []

    def spec(self) -> Tuple[int, ...]:
        """Integer parameters written to the model file's layer table."""
        return ()

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout, need_input_grad=True):
        raise NotImplementedError


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_ch, out_ch, k=3, stride=1, padding=1):
        self.in_ch, self.out_ch, self.k, self.stride, self.padding = in_ch, out_ch, k, stride, padding
        self.weight = Param(np.zeros((out_ch, in_ch, k, k), dtype=np.float32))
        self.bias = Param(np.zeros(out_ch, dtype=np.float32))
        self.params = [self.weight, self.bias]
        self._cache = None

    def spec(self):
        return (self.in_ch, self.out_ch, self.k, self.stride, self.padding)

    def init(self, rng):
        fan_in = self.in_ch * self.k * self.k
        limit = np.sqrt(6.0 / fan_in)
        self.weight.data = rng.uniform(-limit, limit, self.weight.data.shape).astype(self.weight.data.dtype)
        self.bias.data = np.zeros_like(self.bias.data)

    def out_shape(self, in_shape):
        h, w, c = in_shape
        return (F.conv_out_size(h, self.k, self.stride, self.padding),
                F.conv_out_size(w, self.k, self.stride, self.padding), self.out_ch)

    def forward(self, x, train=False):
        out, cache = F.conv2d_nhwc(x, self.weight.data, self.bias.data, self.stride, self.padding)
        self._cache = cache if train else None
        return out

    def backward(self, dout, need_input_grad=True):
        if self._cache is None:
            raise RuntimeError("backward called before a training forward pass")
        dx, dw, db = F.conv2d_nhwc_backward(dout, self._cache, need_input_grad)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, window=2, stride=2, ceil_mode=True):
        self.window, self.stride, self.ceil_mode = window, stride, ceil_mode
        self.params = []
        self._cache = None

    def spec(self):
        return (self.window, self.stride, int(self.ceil_mode))

    def out_shape(self, in_shape):
        h, w, c = in_shape
        return (F.pool_out_size(h, self.window, self.stride, self.ceil_mode),
                F.pool_out_size(w, self.window, self.stride, self.ceil_mode), c)

    def forward(self, x, train=False):
        out, cache = F.maxpool2d_nhwc(x, self.window, self.stride, self.ceil_mode)
        self._cache = cache if train else None
        return out

    def backward(self, dout, need_input_grad=True):
        if self._cache is None:
            raise RuntimeError("backward called before a training forward pass")
        return F.maxpool2d_nhwc_backward(dout, self._cache)


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self.params = []
        self._x = None

    def forward(self, x, train=False):
        self._x = x if train else None
        return F.relu(x)

    def backward(self, dout, need_input_grad=True):
        if self._x is None:
            raise RuntimeError("backward called before a training forward pass")
        return F.relu_backward(dout, self._x)


class Flatten(Layer):
    """Flattens (N, H, W, C) to (N, H*W*C) in channels-last order."""

    kind = "flatten"

    def __init__(self):
        self.params = []
        self._shape = None

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, need_input_grad=True):
        if self._shape is None:
            raise RuntimeError("backward called before a training forward pass")
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Param(np.zeros((n_out, n_in), dtype=np.float32))
        self.bias = Param(np.zeros(n_out, dtype=np.float32))
        self.params = [self.weight, self.bias]
        self._x = None

    def spec(self):
        return (self.n_in, self.n_out)

    def init(self, rng):
        limit = np.sqrt(6.0 / self.n_in)
        self.weight.data = rng.uniform(-limit, limit, self.weight.data.shape).astype(self.weight.data.dtype)
        self.bias.data = np.zeros_like(self.bias.data)

    def out_shape(self, in_shape):
        return (self.n_out,)

    def forward(self, x, train=False):
        self._x = x if train else None
        return F.dense(x, self.weight.data, self.bias.data)

    def backward(self, dout, need_input_grad=True):
        if self._x is None:
            raise RuntimeError("backward called before a training forward pass")
        dx, dw, db = F.dense_backward(dout, self._x, self.weight.data)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


def layer_from_spec(kind: str, ints) -> Layer:
    if kind == "conv2d":
        return Conv2D(*ints)
    if kind == "maxpool2d":
        w, s, c = ints
        return MaxPool2D(w, s, bool(c))
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    if kind == "dense":
        return Dense(*ints)
    raise ValueError(f"unknown layer kind {kind!r}")
