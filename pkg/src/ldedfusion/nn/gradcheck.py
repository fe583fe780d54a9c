"""Central finite differences for checking backprop."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from .functional import softmax_cross_entropy
from .model import Model


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * eps)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation, relative to the larger of the two gradients' peak magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_model_gradients(model: Model, inputs, labels, eps: float = 1e-3) -> Dict[str, float]:
    """Relative error of every parameter tensor's backprop gradient. Run on a float64 model."""
    labels = np.asarray(labels)

    def loss():
        return softmax_cross_entropy(model.forward(inputs), labels)[0]

    model.zero_grad()
    _, dlogits, _ = softmax_cross_entropy(model.forward(inputs, train=True), labels)
    model.backward(dlogits)
    errors = {}
    for li, layer in enumerate(model.layers()):
        for pi, p in enumerate(layer.params):
            num = numerical_gradient(loss, p.data, eps)
            errors[f"{li}:{layer.kind}:{pi}"] = rel_error(p.grad, num)
    return errors
