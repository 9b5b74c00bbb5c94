"""Multi-head attention whose keys come from signature-graph node embeddings.

One token per graph node. Keys project the node's eigenvalue-scaled
embedding, values project the channel means of the node's patch, and
queries project those same patch means plus a sinusoidal encoding of the
node index.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import softmax


@dataclass(frozen=True)
class MhaConfig:
    head_count: int = 2
    key_dim: int = 16
    value_dim: int = 16

    def __post_init__(self):
        if self.head_count < 1 or self.key_dim < 1 or self.value_dim < 1:
            raise ConfigError("MHA sizes must be positive")
        if self.key_dim % self.head_count or self.value_dim % self.head_count:
            raise ConfigError(
                f"key_dim {self.key_dim} and value_dim {self.value_dim} must be divisible "
                f"by head_count {self.head_count}"
            )


def positional_encoding(n: int, dim: int) -> np.ndarray:
    """Standard sin/cos encoding: even columns sin, odd columns cos."""
    pos = np.arange(n)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_mha_params(cfg: MhaConfig, key_in: int, feat_in: int, rng, dtype=np.float32) -> dict:
    def glorot(shape):
        lim = np.sqrt(6.0 / sum(shape))
        return rng.uniform(-lim, lim, size=shape).astype(dtype)

    return {
        "wq": glorot((feat_in, cfg.key_dim)),
        "wk": glorot((key_in, cfg.key_dim)),
        "wv": glorot((feat_in, cfg.value_dim)),
        "wo": glorot((cfg.value_dim, cfg.value_dim)),
    }


class MhaCache(NamedTuple):
    keys_in: np.ndarray
    feats: np.ndarray
    q_in: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    concat: np.ndarray
    params: dict
    cfg: MhaConfig


def _split(x, h):
    b, n, d = x.shape
    return x.reshape(b, n, h, d // h).transpose(0, 2, 1, 3)


def _merge(x):
    b, h, n, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * d)


def mha_forward(keys_in, feats, params: dict, cfg: MhaConfig):
    """``keys_in`` (B, n, P) node embeddings, ``feats`` (B, n, C) patch means.

    Returns ``(out, cache)`` with ``out`` of shape (B, n, value_dim). The
    row-stochastic attention weights are ``cache.attn`` (B, heads, n, n),
    kept in float64.
    """
    if keys_in.ndim != 3 or feats.ndim != 3 or keys_in.shape[:2] != feats.shape[:2]:
        raise ShapeError(f"keys {keys_in.shape} and features {feats.shape} disagree")
    if keys_in.shape[2] != params["wk"].shape[0] or feats.shape[2] != params["wq"].shape[0]:
        raise ConfigError("MHA parameter shapes do not match the inputs")
    n, c = feats.shape[1:]
    q_in = feats + positional_encoding(n, c).astype(feats.dtype)
    q = q_in @ params["wq"]
    k = keys_in @ params["wk"]
    v = feats @ params["wv"]
    h = cfg.head_count
    qh, kh, vh = _split(q, h), _split(k, h), _split(v, h)
    scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(cfg.key_dim)
    attn = softmax(scores.astype(np.float64))
    concat = _merge(attn.astype(feats.dtype) @ vh)
    out = concat @ params["wo"]
    return out, MhaCache(keys_in, feats, q_in, q, k, v, attn, concat, params, cfg)


def mha_backward(grad_out, cache: MhaCache):
    """Returns ``(grad_keys_in, grad_feats, param_grads)``."""
    p, cfg = cache.params, cache.cfg
    h = cfg.head_count

    def outer(a, g):  # sum_b a[b].T @ g[b]
        return a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])

    g_wo = outer(cache.concat, grad_out)
    g_heads = _split(grad_out @ p["wo"].T, h)
    qh, kh, vh = _split(cache.q, h), _split(cache.k, h), _split(cache.v, h)
    attn = cache.attn.astype(grad_out.dtype)
    g_attn = g_heads @ vh.transpose(0, 1, 3, 2)
    g_vh = attn.transpose(0, 1, 3, 2) @ g_heads
    g_scores = attn * (g_attn - (g_attn * attn).sum(axis=-1, keepdims=True))
    g_scores = g_scores / np.sqrt(cfg.key_dim)
    g_q = _merge(g_scores @ kh)
    g_k = _merge(g_scores.transpose(0, 1, 3, 2) @ qh)
    g_v = _merge(g_vh)
    grads = {
        "wq": outer(cache.q_in, g_q),
        "wk": outer(cache.keys_in, g_k),
        "wv": outer(cache.feats, g_v),
        "wo": g_wo,
    }
    g_keys = g_k @ p["wk"].T
    g_feats = g_v @ p["wv"].T + g_q @ p["wq"].T
    return g_keys, g_feats, grads
