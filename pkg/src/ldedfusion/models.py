"""The three classifiers: modified VGG19 (image), MFCC-CNN (audio) and the hybrid fusion CNN."""

from __future__ import annotations

from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .nn.layers import Conv2D, Flatten, Layer, MaxPool2D, ReLU
from .nn.model import Model, Stream

CLASSES = ("defect_free", "defective", "laser_off")
IMAGE_HW = (30, 30)
LOGMEL_HW = (64, 31)
MFCC_HW = (20, 31)

VGG19_BLOCKS = ((64, 2), (128, 2), (256, 4), (512, 4), (512, 4))
HYBRID_VISUAL_BLOCKS = ((16, 2), (32, 2), (64, 2), (128, 1), (128, 1))
HYBRID_ACOUSTIC_BLOCKS = ((16, 1), (32, 1), (64, 1), (64, 1))
MFCC_CNN_BLOCKS = ((16, 1), (32, 1), (64, 1), (64, 1))

# CLI spelling -> architecture id
ARCH_ALIASES = {
    "vgg19": "modified_vgg19",
    "mfcc-cnn": "mfcc_cnn",
    "hybrid": "hybrid_cnn",
    "modified_vgg19": "modified_vgg19",
    "mfcc_cnn": "mfcc_cnn",
    "hybrid_cnn": "hybrid_cnn",
}


def resize_bilinear(image, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling (output corners hit input corners)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got {out_h}x{out_w}")
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if h < 2 or w < 2:
        raise ValueError(f"input must be at least 2x2, got {h}x{w}")
    ys = np.linspace(0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.minimum(np.floor(ys).astype(int), h - 2)
    x0 = np.minimum(np.floor(xs).astype(int), w - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = img[y0][:, x0]
    b = img[y0][:, x0 + 1]
    c = img[y0 + 1][:, x0]
    d = img[y0 + 1][:, x0 + 1]
    top = a + (b - a) * fx
    bottom = c + (d - c) * fx
    return top + (bottom - top) * fy


def _vgg_stack(in_ch: int, blocks: Iterable[Tuple[int, int]]) -> List[Layer]:
    layers: List[Layer] = []
    c = in_ch
    for out_ch, n_conv in blocks:
        for _ in range(n_conv):
            layers += [Conv2D(c, out_ch, 3, 1, 1), ReLU()]
            c = out_ch
        layers.append(MaxPool2D(2, 2, ceil_mode=True))
    layers.append(Flatten())
    return layers


def _scaled(blocks, width_multiplier):
    return tuple((max(1, int(round(c * width_multiplier))), n) for c, n in blocks)


def build_modified_vgg19(width_multiplier: float = 0.25, seed: int = 0, input_hw=IMAGE_HW) -> Model:
    """VGG19's 16-conv/5-pool trunk without its fully connected stack; one linear head."""
    if not 0 < width_multiplier <= 1:
        raise ValueError("width_multiplier must be in (0, 1]")
    stream = Stream("image", (1, *input_hw), _vgg_stack(1, _scaled(VGG19_BLOCKS, width_multiplier)))
    return Model("modified_vgg19", [stream], len(CLASSES), width_multiplier).init(seed)


def build_mfcc_cnn(seed: int = 0, input_hw=MFCC_HW, blocks=MFCC_CNN_BLOCKS) -> Model:
    stream = Stream("mfcc", (1, *input_hw), _vgg_stack(1, blocks))
    return Model("mfcc_cnn", [stream], len(CLASSES)).init(seed)


def build_hybrid_cnn(seed: int = 0, image_hw=IMAGE_HW, spec_hw=LOGMEL_HW,
                     visual_blocks=HYBRID_VISUAL_BLOCKS, acoustic_blocks=HYBRID_ACOUSTIC_BLOCKS) -> Model:
    """Image stream (8 conv / 5 pool) and log-mel stream (4 conv / 4 pool), concatenated."""
    visual = Stream("image", (1, *image_hw), _vgg_stack(1, visual_blocks))
    acoustic = Stream("logmel", (1, *spec_hw), _vgg_stack(1, acoustic_blocks))
    return Model("hybrid_cnn", [visual, acoustic], len(CLASSES)).init(seed)


def build_model(arch: str, seed: int = 0, width_multiplier: float = None) -> Model:
    arch = ARCH_ALIASES.get(arch, arch)
    if arch == "modified_vgg19":
        return build_modified_vgg19(0.25 if width_multiplier is None else width_multiplier, seed)
    if arch == "mfcc_cnn":
        return build_mfcc_cnn(seed)
    if arch == "hybrid_cnn":
        return build_hybrid_cnn(seed)
    raise ValueError(f"unknown architecture {arch!r}")


def count_layers(model: Model, kind: str, stream: str = None) -> int:
    streams = [s for s in model.streams if stream is None or s.name == stream]
    return sum(1 for s in streams for layer in s.layers if layer.kind == kind)
