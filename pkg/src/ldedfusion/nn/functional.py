"""Forward/backward kernels.

Activations are batched and channels-last (N, H, W, C) internally so that
im2col copies contiguous channel runs. ``conv2d_forward``, ``maxpool2d_forward``
and ``dense_forward`` accept the (C, H, W) layout used at the public surface.
"""

from __future__ import annotations

import math

import numpy as np


def conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def pool_out_size(n: int, window: int, stride: int, ceil_mode: bool) -> int:
    if ceil_mode:
        out = math.ceil((n - window) / stride) + 1
        # last window must start inside the input
        if (out - 1) * stride >= n:
            out -= 1
        return max(out, 1)
    return (n - window) // stride + 1


def conv2d_nhwc(x, w, b, stride=1, padding=0):
    """x: (N, H, W, C_in); w: (C_out, C_in, k, k); b: (C_out,). Returns (out, cache)."""
    n, h, wd, c = x.shape
    c_out, c_in, k, k2 = w.shape
    if c != c_in:
        raise ValueError(f"conv2d channel mismatch: input has {c} channels, kernels expect {c_in}")
    if h + 2 * padding < k or wd + 2 * padding < k2:
        raise ValueError(f"conv2d input {h}x{wd} (padding {padding}) smaller than kernel {k}x{k2}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = conv_out_size(h, k, stride, padding)
    wo = conv_out_size(wd, k2, stride, padding)
    # columns ordered (kh, kw, C) so each copy below moves contiguous channel runs
    cols = np.empty((n, ho, wo, k, k2, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k2):
            cols[:, :, :, i, j, :] = x[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]
    cols = cols.reshape(n * ho * wo, k * k2 * c)
    wmat = w.transpose(0, 2, 3, 1).reshape(c_out, -1)
    out = cols @ wmat.T
    out += b
    return out.reshape(n, ho, wo, c_out), (cols, x.shape, w, wmat, stride, padding, (ho, wo))


def conv2d_nhwc_backward(dout, cache, need_input_grad=True):
    cols, xp_shape, w, wmat, stride, padding, (ho, wo) = cache
    c_out, c_in, k, k2 = w.shape
    n = xp_shape[0]
    dmat = dout.reshape(-1, c_out)
    dw = (dmat.T @ cols).reshape(c_out, k, k2, c_in).transpose(0, 3, 1, 2)
    db = dmat.sum(axis=0)
    if not need_input_grad:
        return None, dw, db
    dcols = (dmat @ wmat).reshape(n, ho, wo, k, k2, c_in)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k2):
            dxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, i, j, :]
    if padding:
        dxp = dxp[:, padding:-padding, padding:-padding, :]
    return dxp, dw, db


def maxpool2d_nhwc(x, window=2, stride=2, ceil_mode=True):
    """Max pooling; in ceil mode the edge windows are clipped to the valid region.

    The cached index is the flat in-window offset of the maximum (first one on ties).
    """
    n, h, wd, c = x.shape
    ho = pool_out_size(h, window, stride, ceil_mode)
    wo = pool_out_size(wd, window, stride, ceil_mode)
    if ho < 1 or wo < 1:
        raise ValueError(f"maxpool window {window} does not fit input {h}x{wd}")
    ph = max((ho - 1) * stride + window - h, 0)
    pw = max((wo - 1) * stride + window - wd, 0)
    xp = np.pad(x, ((0, 0), (0, ph), (0, pw), (0, 0)), constant_values=-np.inf) if (ph or pw) else x
    out = None
    for i in range(window):
        for j in range(window):
            sl = xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]
            if out is None:
                out = sl.copy()
                idx = np.zeros(out.shape, dtype=np.int8)
                continue
            better = sl > out
            np.copyto(out, sl, where=better)
            idx[better] = i * window + j
    return out, (idx, x.shape, xp.shape, window, stride)


def maxpool2d_nhwc_backward(dout, cache):
    idx, x_shape, xp_shape, window, stride = cache
    ho, wo = idx.shape[1:3]
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(window):
        for j in range(window):
            hit = idx == i * window + j
            dxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += np.where(hit, dout, 0)
    return dxp[:, :x_shape[1], :x_shape[2], :]


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


def dense(x, w, b):
    """x: (N, n); w: (m, n); b: (m,)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"dense width mismatch: input has {x.shape[-1]} features, weights expect {w.shape[1]}")
    return x @ w.T + b


def dense_backward(dout, x, w):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def softmax(logits):
    z = np.asarray(logits)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax received a non-finite logit")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(probs, true_class) -> float:
    p = np.asarray(probs)
    if not 0 <= true_class < p.shape[-1]:
        raise IndexError(f"class index {true_class} out of range for {p.shape[-1]} classes")
    return float(-np.log(p[true_class] + 1e-12))


def softmax_cross_entropy(logits, labels):
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"label out of range for {k} classes")
    probs = softmax(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(picked + 1e-12)))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return loss, grad / n, probs


# (C, H, W) entry points --------------------------------------------------

def _to_nhwc(x):
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    return x.transpose(0, 2, 3, 1)


def _from_nhwc(y, single):
    y = y.transpose(0, 3, 1, 2)
    return y[0] if single else y


def conv2d_forward(x, kernels, bias, stride=1, padding=0):
    """Cross-correlation of a (C_in, H, W) or (N, C_in, H, W) input."""
    single = np.ndim(x) == 3
    out, _ = conv2d_nhwc(_to_nhwc(x), np.asarray(kernels), np.asarray(bias), stride, padding)
    return _from_nhwc(out, single)


def maxpool2d_forward(x, window=2, stride=2, ceil_mode=True):
    """Returns the pooled (C, H', W') array and the flat in-window argmax indices."""
    single = np.ndim(x) == 3
    out, cache = maxpool2d_nhwc(_to_nhwc(x), window, stride, ceil_mode)
    return _from_nhwc(out, single), _from_nhwc(cache[0], single)


def dense_forward(x, weights, bias):
    return dense(np.asarray(x), np.asarray(weights), np.asarray(bias))
