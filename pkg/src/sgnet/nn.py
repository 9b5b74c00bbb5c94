"""Differentiable building blocks: conv, batch norm, ReLU, max-pool, FC, loss, SGD.

Tensors are NHWC numpy arrays. Every op works in whatever float dtype it
is given (float32 for training, float64 for gradient checks); reductions
accumulate in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ConvCache(NamedTuple):
    input_shape: tuple
    padded_shape: tuple
    cols: np.ndarray
    kernel: tuple
    stride: int
    padding: int


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d_forward(x, filters, bias, stride: int = 1, padding: int = 0):
    """2D cross-correlation.

    ``out[b, y, x, o] = bias[o] + sum_{i,j,k} filters[o, i, j, k] * xp[b, y*s + i, x*s + j, k]``
    with ``xp`` the zero-padded input and 0-based kernel offsets ``i, j``.
    Returns ``(out, cache)``.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (B, H, W, C) input, got {x.shape}")
    out_ch, kh, kw, in_ch = filters.shape
    b, h, w, c = x.shape
    if c != in_ch:
        raise ShapeError(f"filter expects {in_ch} input channels, input has {c}")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"non-positive conv output {oh}x{ow} for input {h}x{w}, kernel {kh}x{kw}")
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x
    cols = kernels.im2col(xp, kh, kw, stride)
    out = cols @ filters.reshape(out_ch, -1).T
    out += bias
    cache = ConvCache(x.shape, xp.shape, cols, (kh, kw), stride, padding)
    return out.reshape(b, oh, ow, out_ch), cache


def conv2d_backward(grad_out, cache: ConvCache, filters):
    """Returns ``(grad_input, grad_filters, grad_bias)``."""
    out_ch = filters.shape[0]
    if grad_out.shape[-1] != out_ch or grad_out.shape[0] != cache.input_shape[0]:
        raise ShapeError(f"grad_out {grad_out.shape} inconsistent with filters {filters.shape}")
    g = grad_out.reshape(-1, out_ch)
    if g.shape[0] != cache.cols.shape[0]:
        raise ShapeError("grad_out spatial size does not match the forward call")
    grad_filters = (g.T @ cache.cols).reshape(filters.shape)
    grad_bias = g.sum(axis=0, dtype=np.float64).astype(g.dtype)
    dcols = g @ filters.reshape(out_ch, -1)
    kh, kw = cache.kernel
    dxp = kernels.col2im(dcols, cache.padded_shape, kh, kw, cache.stride)
    p = cache.padding
    dx = dxp[:, p : dxp.shape[1] - p, p : dxp.shape[2] - p, :] if p else dxp
    return np.ascontiguousarray(dx), grad_filters, grad_bias


class BatchNormCache(NamedTuple):
    mode: str
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    batch_mean: Optional[np.ndarray]
    batch_var: Optional[np.ndarray]


def batchnorm_forward(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    mode: str = "train",
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
    update_stats: bool = True,
):
    """Per-channel (last axis) batch normalisation; returns ``(out, cache)``.

    In train mode the running statistics are updated in place unless
    ``update_stats`` is false (the batch statistics are still in the cache).
    """
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise ConfigError("batch norm in train mode needs batch size >= 2")
        mean = x.mean(axis=axes, dtype=np.float64)
        var = x.var(axis=axes, dtype=np.float64)
        if update_stats:
            update_running_stats(running_mean, running_var, mean, var, momentum)
    elif mode == "eval":
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    else:
        raise ConfigError(f"unknown batch norm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((x - mean) * inv_std).astype(x.dtype)
    out = gamma * xhat + beta
    cache = BatchNormCache(
        mode, xhat, inv_std.astype(x.dtype), gamma,
        mean if mode == "train" else None, var if mode == "train" else None,
    )
    return out.astype(x.dtype, copy=False), cache


def update_running_stats(running_mean, running_var, mean, var, momentum=BN_MOMENTUM):
    running_mean[...] = (1.0 - momentum) * running_mean + momentum * mean
    running_var[...] = (1.0 - momentum) * running_var + momentum * var


def batchnorm_backward(grad_out, cache: BatchNormCache, mode: Optional[str] = None):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    if mode is not None and mode != cache.mode:
        raise ConfigError(f"backward requested for {mode!r} but cache is from {cache.mode!r}")
    axes = tuple(range(grad_out.ndim - 1))
    g64 = grad_out.astype(np.float64)
    grad_beta = g64.sum(axis=axes)
    grad_gamma = (g64 * cache.xhat).sum(axis=axes)
    scale = cache.gamma.astype(np.float64) * cache.inv_std
    if cache.mode == "eval":
        dx = g64 * scale
    else:
        n = grad_out.size // grad_out.shape[-1]
        dx = scale / n * (n * g64 - grad_beta - cache.xhat * grad_gamma)
    dt = grad_out.dtype
    return dx.astype(dt), grad_gamma.astype(dt), grad_beta.astype(dt)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def maxpool_forward(x, window: int, stride: Optional[int] = None):
    """Returns ``(out, argmax)``; argmax holds flat ``y*W + x`` source indices."""
    stride = stride or window
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects (B, H, W, C) input, got {x.shape}")
    if window > x.shape[1] or window > x.shape[2]:
        raise ShapeError(f"pool window {window} larger than input {x.shape[1]}x{x.shape[2]}")
    return kernels.maxpool_forward(x, window, stride)


def maxpool_backward(grad_out, argmax, input_shape):
    return kernels.maxpool_backward(grad_out, argmax, input_shape)


def fc_forward(x, weights, bias):
    """Affine map ``x @ weights.T + bias``; weights are (out, in)."""
    if x.shape[-1] != weights.shape[1]:
        raise ShapeError(f"fc expects {weights.shape[1]} inputs, got {x.shape[-1]}")
    return x @ weights.T + bias


def fc_backward(grad_out, x, weights):
    """Returns ``(grad_input, grad_weights, grad_bias)``."""
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0, dtype=np.float64).astype(grad_out.dtype)
    return grad_out @ weights, grad_w, grad_b


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy. Returns ``(loss, grad_logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,) or (b and (labels.min() < 0 or labels.max() >= k)):
        raise ConfigError(f"labels must be {b} class indices in [0, {k})")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(b), labels] - logsum
    loss = float(-logp.mean())
    grad = np.exp(z - logsum[:, None])
    grad[np.arange(b), labels] -= 1.0
    return loss, (grad / b).astype(logits.dtype)


@dataclass
class ParamGrad:
    """A parameter, its gradient and its momentum buffer (all same shape)."""

    name: str
    param: np.ndarray
    grad: np.ndarray
    velocity: np.ndarray = field(default=None, repr=False)
    decay: bool = True

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = np.zeros_like(self.param)
        if not (self.param.shape == self.grad.shape == self.velocity.shape):
            raise ShapeError(f"{self.name}: param/grad/velocity shapes differ")


def sgd_step(params: Iterable[ParamGrad], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
    """``v <- momentum*v + grad + wd*param``; ``param <- param - lr*v`` (in place)."""
    for pg in params:
        step = pg.grad + weight_decay * pg.param if (weight_decay and pg.decay) else pg.grad
        pg.velocity *= momentum
        pg.velocity += step
        pg.param -= lr * pg.velocity


@dataclass
class ConvBlock:
    """conv -> batch norm -> ReLU -> max-pool.

    ``forward`` also returns the post-ReLU, pre-pool activation so a
    signature layer can tap it.
    """

    filters: np.ndarray
    bias: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    pool: int = 2
    stride: int = 1
    padding: int = 1

    @classmethod
    def init(cls, in_ch, out_ch, kernel, pool, rng, dtype=np.float32):
        fan_in = kernel * kernel * in_ch
        filters = rng.standard_normal((out_ch, kernel, kernel, in_ch)) * np.sqrt(2.0 / fan_in)
        return cls(
            filters=filters.astype(dtype),
            bias=np.zeros(out_ch, dtype),
            bn_gamma=np.ones(out_ch, dtype),
            bn_beta=np.zeros(out_ch, dtype),
            bn_running_mean=np.zeros(out_ch, dtype),
            bn_running_var=np.ones(out_ch, dtype),
            pool=pool,
            padding=kernel // 2,
        )

    @property
    def out_channels(self) -> int:
        return self.filters.shape[0]

    def param_names(self):
        return ("filters", "bias", "bn_gamma", "bn_beta")

    def forward(self, x, mode="train", update_stats=True):
        if x.shape[-1] != self.filters.shape[-1]:
            raise ShapeError(f"block expects {self.filters.shape[-1]} channels, got {x.shape[-1]}")
        z, conv_cache = conv2d_forward(x, self.filters, self.bias, self.stride, self.padding)
        y, bn_cache = batchnorm_forward(
            z, self.bn_gamma, self.bn_beta, self.bn_running_mean, self.bn_running_var,
            mode=mode, update_stats=update_stats,
        )
        act = relu(y)
        pooled, argmax = maxpool_forward(act, self.pool)
        return act, pooled, (conv_cache, bn_cache, y, argmax, act.shape)

    def backward(self, grad_pooled, cache, grad_act=None):
        conv_cache, bn_cache, y, argmax, act_shape = cache
        g = maxpool_backward(grad_pooled, argmax, act_shape)
        if grad_act is not None:
            g = g + grad_act
        g = relu_backward(g, y)
        g, d_gamma, d_beta = batchnorm_backward(g, bn_cache)
        dx, d_filters, d_bias = conv2d_backward(g, conv_cache, self.filters)
        return dx, {"filters": d_filters, "bias": d_bias, "bn_gamma": d_gamma, "bn_beta": d_beta}
