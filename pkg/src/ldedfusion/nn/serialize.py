"""Binary model file ("LDNN").

All integers little-endian::

    magic      4 bytes  b"LDNN"
    version    u16      1
    arch_id    u8       0 custom, 1 modified_vgg19, 2 mfcc_cnn, 3 hybrid_cnn
    width      f32      width multiplier
    n_classes  u16
    n_streams  u8
    per stream:
        name_len u8, name (utf-8)
        input extents  3 x u32  (C, H, W)
        norm_mean f64, norm_std f64
        n_layers u16, then per layer: kind u8, n_ints u8, n_ints x u32
    head: n_layers u16 (always 2: dense, softmax), same per-layer encoding
    n_params   u32      number of parameter arrays that follow
    parameters          float32, concatenated in layer order (weight then bias)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .layers import KIND_IDS, KIND_NAMES, layer_from_spec
from .model import Model, Stream

MAGIC = b"LDNN"
VERSION = 1
ARCH_IDS = {"custom": 0, "modified_vgg19": 1, "mfcc_cnn": 2, "hybrid_cnn": 3}
ARCH_NAMES = {v: k for k, v in ARCH_IDS.items()}


class ModelFormatError(ValueError):
    pass


def _write_layer(buf, kind, ints):
    buf.write(struct.pack("<BB", KIND_IDS[kind], len(ints)))
    buf.write(struct.pack(f"<{len(ints)}I", *ints))


def dumps(model: Model) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HBfHB", VERSION, ARCH_IDS.get(model.arch, 0), model.width_multiplier,
                          model.n_classes, len(model.streams)))
    for s in model.streams:
        name = s.name.encode("utf-8")
        buf.write(struct.pack("<B", len(name)) + name)
        buf.write(struct.pack("<3I", *s.input_shape))
        buf.write(struct.pack("<dd", s.norm_mean, s.norm_std))
        buf.write(struct.pack("<H", len(s.layers)))
        for layer in s.layers:
            _write_layer(buf, layer.kind, layer.spec())
    buf.write(struct.pack("<H", 2))
    _write_layer(buf, "dense", model.head.spec())
    _write_layer(buf, "softmax", ())
    params = model.parameters()
    buf.write(struct.pack("<I", len(params)))
    for p in params:
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ModelFormatError(f"truncated model file at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def layer(self):
        kind_id, n = self.take("<BB")
        if kind_id not in KIND_NAMES:
            raise ModelFormatError(f"unknown layer kind id {kind_id} at byte {self.pos - 2}")
        return KIND_NAMES[kind_id], self.take(f"<{n}I")


def loads(data: bytes) -> Model:
    r = _Reader(data)
    if data[:4] != MAGIC:
        raise ModelFormatError("bad magic; not an LDNN model file")
    r.pos = 4
    version, arch_id, width, n_classes, n_streams = r.take("<HBfHB")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    streams = []
    for _ in range(n_streams):
        (name_len,) = r.take("<B")
        name = bytes(r.take(f"<{name_len}s")[0]).decode("utf-8")
        shape = r.take("<3I")
        mean, std = r.take("<dd")
        (n_layers,) = r.take("<H")
        layers = [layer_from_spec(*r.layer()) for _ in range(n_layers)]
        streams.append(Stream(name, tuple(shape), layers, mean, std))
    model = Model(ARCH_NAMES.get(arch_id, "custom"), streams, n_classes, width)
    (n_head,) = r.take("<H")
    head = [r.layer() for _ in range(n_head)]
    if head[0] != ("dense", model.head.spec()):
        raise ModelFormatError(f"head {head[0]} inconsistent with stream widths {model.widths}")
    (n_params,) = r.take("<I")
    params = model.parameters()
    if n_params != len(params):
        raise ModelFormatError(f"expected {len(params)} parameter arrays, file has {n_params}")
    for p in params:
        count = p.data.size
        end = r.pos + 4 * count
        if end > len(data):
            raise ModelFormatError(f"truncated parameter data at byte {r.pos}")
        p.data = np.frombuffer(data, dtype="<f4", count=count, offset=r.pos).astype(np.float32).reshape(p.data.shape)
        r.pos = end
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after parameters")
    return model


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(dumps(model))


def load_model(path) -> Model:
    return loads(Path(path).read_bytes())
