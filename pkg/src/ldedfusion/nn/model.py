"""Multi-stream classifier: per-modality layer stacks, concatenation, one dense head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .functional import softmax
from .layers import Dense, Flatten, Layer, Param


@dataclass
class Stream:
    name: str
    input_shape: Tuple[int, int, int]  # (C, H, W)
    layers: List[Layer]
    norm_mean: float = 0.0
    norm_std: float = 1.0

    def output_width(self) -> int:
        c, h, w = self.input_shape
        shape = (h, w, c)
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return int(np.prod(shape))

    def forward(self, x, train=False):
        # (N, C, H, W) -> channels-last
        x = (x.transpose(0, 2, 3, 1) - self.norm_mean) / self.norm_std
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for i in range(len(self.layers) - 1, -1, -1):
            dout = self.layers[i].backward(dout, need_input_grad=i > 0)
        return dout


class Model:
    """Streams are concatenated (in order) and fed to a dense head with softmax output."""

    def __init__(self, arch: str, streams: Sequence[Stream], n_classes: int = 3,
                 width_multiplier: float = 1.0):
        self.arch = arch
        self.width_multiplier = float(width_multiplier)
        self.streams = list(streams)
        self.n_classes = n_classes
        self.widths = [s.output_width() for s in self.streams]
        self.head = Dense(sum(self.widths), n_classes)
        self._forward_done = False

    @property
    def stream_names(self) -> List[str]:
        return [s.name for s in self.streams]

    @property
    def input_shapes(self) -> Dict[str, Tuple[int, int, int]]:
        return {s.name: tuple(s.input_shape) for s in self.streams}

    @property
    def dtype(self):
        return self.head.weight.data.dtype

    def layers(self) -> List[Layer]:
        out: List[Layer] = []
        for s in self.streams:
            out.extend(s.layers)
        out.append(self.head)
        return out

    def parameters(self) -> List[Param]:
        return [p for layer in self.layers() for p in layer.params]

    def init(self, seed: int) -> "Model":
        """He-uniform weights, zero biases, drawn in a fixed layer order from ``seed``."""
        rng = np.random.default_rng(seed)
        for layer in self.layers():
            if hasattr(layer, "init"):
                layer.init(rng)
        return self

    def astype(self, dtype) -> "Model":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def check_inputs(self, inputs: Mapping[str, np.ndarray]) -> int:
        missing = set(self.stream_names) - set(inputs)
        if missing:
            raise ValueError(f"missing input streams: {sorted(missing)}")
        n = None
        for s in self.streams:
            x = inputs[s.name]
            if x.ndim != 4 or tuple(x.shape[1:]) != tuple(s.input_shape):
                raise ValueError(
                    f"stream {s.name!r} expects (N, {', '.join(map(str, s.input_shape))}), got {x.shape}"
                )
            if n is not None and x.shape[0] != n:
                raise ValueError("all streams must share the batch size")
            n = x.shape[0]
        return n

    def forward(self, inputs: Mapping[str, np.ndarray], train=False) -> np.ndarray:
        """Logits for a batch; ``inputs`` maps stream name -> (N, C, H, W)."""
        self.check_inputs(inputs)
        feats = [s.forward(inputs[s.name].astype(self.dtype, copy=False), train) for s in self.streams]
        flat = [f.reshape(f.shape[0], -1) for f in feats]
        self._feat_shapes = [f.shape for f in feats]
        fused = flat[0] if len(flat) == 1 else np.concatenate(flat, axis=1)
        self._forward_done = train
        return self.head.forward(fused, train)

    def backward(self, dlogits):
        """Accumulate parameter gradients from d(loss)/d(logits)."""
        if not self._forward_done:
            raise RuntimeError("backward called before a training forward pass")
        dfused = self.head.backward(dlogits)
        offsets = np.cumsum([0] + self.widths)
        for s, a, b, shape in zip(self.streams, offsets[:-1], offsets[1:], self._feat_shapes):
            s.backward(dfused[:, a:b].reshape(shape))
        self._forward_done = False

    def predict_proba(self, inputs) -> np.ndarray:
        return softmax(self.forward(inputs))
