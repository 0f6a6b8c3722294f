"""Framework-free 1D tensor ops with paired forward/backward passes.

Every op is a pure function returning ``(output, ctx)``; the matching
``*_backward(ctx, grad_out)`` consumes the ctx exactly once and returns
gradients for each differentiable input. Conventions:

- activations are float64 ndarrays shaped (N, C, L) for conv-path ops and
  (N, D) for the dense head
- conv1d uses "same" zero padding (extra zero on the right when the total
  pad is odd) and stride 1 or 2, so output length is ceil(L / stride)
- maxpool routes the gradient to the first maximal element of each window
- all accumulation happens in float64 so finite-difference checks hold
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


# --- conv1d ---


def _same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out_len = -(-length // stride)  # ceil
    total = max((out_len - 1) * stride + kernel - length, 0)
    left = total // 2
    return out_len, left, total - left


def conv1d(x, w, b, stride=1):
    """Same-padded 1D convolution.

    x: (N, C_in, L), w: (C_out, C_in, K), b: (C_out,) -> (N, C_out, ceil(L/stride))
    """
    n, c_in, length = x.shape
    c_out, w_cin, k = w.shape
    if c_in != w_cin:
        raise ValueError(
            f"conv1d channel mismatch: input has {c_in} channels "
            f"(shape {x.shape}) but weights expect {w_cin} (shape {w.shape})"
        )
    if k < 1:
        raise ValueError(f"conv1d kernel size must be >= 1, got {k}")
    if stride not in (1, 2):
        raise ValueError(f"conv1d stride must be 1 or 2, got {stride}")
    out_len, pad_left, pad_right = _same_padding(length, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pad_left, pad_right)))
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # (N,C,out,K)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(
        n * out_len, c_in * k
    )
    y = cols @ w.reshape(c_out, c_in * k).T + b
    y = y.reshape(n, out_len, c_out).transpose(0, 2, 1)
    ctx = (cols, w, x.shape, stride, pad_left, out_len)
    return y, ctx


def conv1d_backward(ctx, gy):
    cols, w, x_shape, stride, pad_left, out_len = ctx
    c_out, c_in, k = w.shape
    n, _, length = x_shape
    gy2 = np.ascontiguousarray(gy.transpose(0, 2, 1)).reshape(n * out_len, c_out)
    gb = gy2.sum(axis=0)
    gw = (gy2.T @ cols).reshape(c_out, c_in, k)
    gcols = gy2 @ w.reshape(c_out, c_in * k)
    gcols = gcols.reshape(n, out_len, c_in, k)
    padded_len = pad_left + length
    span = stride * (out_len - 1) + k
    gxp = np.zeros((n, c_in, max(padded_len, span)))
    for kk in range(k):
        gxp[:, :, kk : kk + stride * (out_len - 1) + 1 : stride] += gcols[
            :, :, :, kk
        ].transpose(0, 2, 1)
    gx = gxp[:, :, pad_left : pad_left + length]
    return gx, gw, gb


def maxpool1d(x, window, stride):
    """Valid windowed max over the last axis.

    x: (N, C, L) -> (N, C, floor((L-window)/stride)+1)
    """
    n, c, length = x.shape
    if window < 1 or stride < 1:
        raise ValueError(f"maxpool1d window/stride must be >= 1, got {window}/{stride}")
    if length < window:
        raise ValueError(f"maxpool1d input length {length} shorter than window {window}")
    views = sliding_window_view(x, window, axis=2)[:, :, ::stride, :]
    y = views.max(axis=-1)
    argmax = views.argmax(axis=-1)  # first maximal element per window
    ctx = (argmax, x.shape, window, stride)
    return y, ctx


def maxpool1d_backward(ctx, gy):
    argmax, x_shape, window, stride = ctx
    n, c, length = x_shape
    out_len = argmax.shape[-1]
    starts = np.arange(out_len) * stride
    pos = starts[None, None, :] + argmax  # in-sample index of each winner
    base = (np.arange(n)[:, None, None] * c + np.arange(c)[None, :, None]) * length
    flat = (base + pos).ravel()
    gx = np.bincount(flat, weights=gy.ravel(), minlength=n * c * length)
    return gx.reshape(n, c, length)


def relu(x):
    y = np.maximum(x, 0.0)
    return y, x > 0


def relu_backward(mask, gy):
    return gy * mask


def global_avgpool(x):
    """Per-channel mean over the temporal axis: (N, C, L) -> (N, C)."""
    n, c, length = x.shape
    return x.mean(axis=2), (x.shape,)


def global_avgpool_backward(ctx, gy):
    (x_shape,) = ctx
    n, c, length = x_shape
    return np.broadcast_to(gy[:, :, None] / length, x_shape).copy()


def dense(x, w, b):
    """Affine map: (N, D) @ (D, M) + (M,) -> (N, M)."""
    if x.shape[1] != w.shape[0]:
        raise ValueError(
            f"dense shape mismatch: input {x.shape} vs weights {w.shape}"
        )
    return x @ w + b, (x, w)


def dense_backward(ctx, gy):
    x, w = ctx
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


def depth_concat(xs):
    """Stack branches channel-wise: [(N, C_i, L)] -> (N, sum C_i, L)."""
    lengths = {x.shape[2] for x in xs}
    if len(lengths) > 1:
        raise ValueError(f"depth_concat length mismatch: {[x.shape for x in xs]}")
    y = np.concatenate(xs, axis=1)
    return y, [x.shape[1] for x in xs]


def depth_concat_backward(channels, gy):
    splits = np.cumsum(channels[:-1])
    return np.split(gy, splits, axis=1)


def residual_add(main, shortcut):
    if main.shape != shortcut.shape:
        raise ValueError(
            f"residual_add shape mismatch: {main.shape} vs {shortcut.shape}"
        )
    return main + shortcut, None


def residual_add_backward(ctx, gy):
    return gy, gy


# --- batch normalization ---


@dataclass
class BatchNormStats:
    """Running per-channel statistics, owned by the caller (the model)."""

    mean: np.ndarray
    var: np.ndarray
    initialized: bool = False

    @classmethod
    def create(cls, channels: int) -> "BatchNormStats":
        return cls(np.zeros(channels), np.ones(channels), False)


def batchnorm1d(x, gamma, beta, stats: BatchNormStats, mode: str):
    """Per-channel batch normalization over (N, C, L).

    Train mode normalizes with batch statistics and updates ``stats`` in
    place by exponential moving average; eval mode uses ``stats`` and
    requires it to be populated.
    """
    n, c, length = x.shape
    if mode == "train":
        if n * length < 2:
            raise ValueError(
                f"batchnorm1d train mode needs N*L >= 2 per channel, got {n}x{length}"
            )
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        if stats.initialized:
            stats.mean = BN_MOMENTUM * stats.mean + (1 - BN_MOMENTUM) * mean
            stats.var = BN_MOMENTUM * stats.var + (1 - BN_MOMENTUM) * var
        else:
            stats.mean, stats.var, stats.initialized = mean.copy(), var.copy(), True
    elif mode == "eval":
        if not stats.initialized:
            raise ValueError("batchnorm1d eval mode with uninitialized running stats")
        mean, var = stats.mean, stats.var
    else:
        raise ValueError(f"batchnorm1d mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    return y, (xhat, inv_std, gamma, mode)


def batchnorm1d_backward(ctx, gy):
    xhat, inv_std, gamma, mode = ctx
    ggamma = (gy * xhat).sum(axis=(0, 2))
    gbeta = gy.sum(axis=(0, 2))
    if mode == "eval":
        gx = gy * (gamma * inv_std)[None, :, None]
        return gx, ggamma, gbeta
    m = gy.shape[0] * gy.shape[2]
    gxhat = gy * gamma[None, :, None]
    gx = (
        inv_std[None, :, None]
        / m
        * (
            m * gxhat
            - gxhat.sum(axis=(0, 2))[None, :, None]
            - xhat * (gxhat * xhat).sum(axis=(0, 2))[None, :, None]
        )
    )
    return gx, ggamma, gbeta


# --- loss ---


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_crossentropy(logits, labels):
    """Mean negative log-likelihood with a numerically stable softmax.

    Returns (loss, probabilities, ctx); backward gives (softmax - onehot)/N.
    """
    labels = np.asarray(labels)
    n, m = logits.shape
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError(
            f"labels must lie in [0, {m}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), labels].mean()
    probs = np.exp(log_probs)
    return loss, probs, (probs, labels)


def softmax_crossentropy_backward(ctx):
    probs, labels = ctx
    n = probs.shape[0]
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    return g / n
