"""The full network: conv blocks, signature taps, optional attention head, classifier.

The classifier input is the concatenation, in this fixed order, of::

    conv_flat | sg_1 ... sg_k | skip_1 ... skip_k | mha

where ``sg_i`` are eigenvalue-scaled node embeddings of tapped block ``i``,
``skip_i`` the same attributes before scaling (skip-connection variant) and
``mha`` the flattened attention output over the first tap's nodes.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import nn
from .attention import MhaConfig, init_mha_params, mha_backward, mha_forward
from .errors import ConfigError, ShapeError
from .sggraph import normalize_extremum, normalize_mode, parse_aggregate
from .sglayer import SignatureTap


@dataclass
class SgnConfig:
    input_shape: tuple = (28, 28, 1)
    blocks: tuple = ((16, 3, 2), (32, 3, 2), (64, 3, 2))  # (out_channels, kernel, pool)
    sg_layers: tuple = (1,)
    patch_size: int = 6
    extremum: str = "maxima"
    mode: str = "horizontal"
    skip_connection: bool = False
    link_chains: bool = False
    eig_offset: float = 0.0
    aggregate: str = "mean"
    mha: Optional[MhaConfig] = None
    class_count: int = 10
    seed: int = 0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.blocks = tuple(tuple(int(v) for v in b) for b in self.blocks)
        self.sg_layers = tuple(sorted({int(v) for v in self.sg_layers}))
        self.extremum = normalize_extremum(self.extremum)
        self.mode = normalize_mode(self.mode)
        if isinstance(self.mha, dict):
            self.mha = MhaConfig(**self.mha)
        parse_aggregate(self.aggregate)
        if len(self.input_shape) != 3:
            raise ConfigError("input_shape must be (H, W, C)")
        if not self.blocks:
            raise ConfigError("at least one conv block is required")
        if any(k < 1 or k > len(self.blocks) for k in self.sg_layers):
            raise ConfigError(f"sg_layers {self.sg_layers} must index blocks 1..{len(self.blocks)}")
        if self.patch_size < 2:
            raise ConfigError("patch_size must be >= 2")
        if self.mha is not None and not self.sg_layers:
            raise ConfigError("the attention head needs at least one signature layer")
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2")

    def to_json(self) -> str:
        """Canonical text form (sorted keys, no whitespace)."""
        d = asdict(self)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SgnConfig":
        return cls(**json.loads(text))


def tap_patch_size(patch_size: int, pool_factor: int) -> int:
    return max(2, patch_size // pool_factor)


class ForwardCache(NamedTuple):
    block_caches: list
    tap_caches: dict
    mha_cache: object
    features: np.ndarray
    last_shape: tuple
    widths: dict


class SgnModel:
    def __init__(self, config: SgnConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(config.seed)
        h, w, c = config.input_shape
        self.blocks: list[nn.ConvBlock] = []
        self.taps: dict[int, SignatureTap] = {}
        factor = 1
        agg = parse_aggregate(config.aggregate)
        for k, (out_ch, kernel, pool) in enumerate(config.blocks, start=1):
            if kernel % 2 == 0:
                raise ConfigError("kernels must be odd (same padding)")
            if pool > h or pool > w:
                raise ConfigError(f"block {k}: pool {pool} larger than its {h}x{w} input")
            self.blocks.append(nn.ConvBlock.init(c, out_ch, kernel, pool, rng, self.dtype))
            if k in config.sg_layers:
                self.taps[k] = SignatureTap(
                    k, h, w, out_ch, tap_patch_size(config.patch_size, factor),
                    config.extremum, config.mode, agg, config.link_chains, config.eig_offset,
                )
            c = out_ch
            h, w = h // pool, w // pool
            factor *= pool
        self.final_shape = (h, w, c)
        self.mha_params = None
        if config.mha is not None:
            first = self.taps[min(self.taps)]
            self.mha_params = init_mha_params(config.mha, first.patch_size, first.channels, rng, self.dtype)
        d = self.classifier_input_width
        lim = np.sqrt(6.0 / (d + config.class_count))
        self.fc_weights = rng.uniform(-lim, lim, size=(config.class_count, d)).astype(self.dtype)
        self.fc_bias = np.zeros(config.class_count, self.dtype)

    # -- geometry ---------------------------------------------------------
    @property
    def widths(self) -> dict:
        """Ordered segment widths of the classifier input."""
        out = {"conv": int(np.prod(self.final_shape))}
        for k, tap in sorted(self.taps.items()):
            out[f"sg{k}"] = tap.width
        if self.config.skip_connection:
            for k, tap in sorted(self.taps.items()):
                out[f"skip{k}"] = tap.width
        if self.config.mha is not None:
            out["mha"] = self.taps[min(self.taps)].node_count * self.config.mha.value_dim
        return out

    @property
    def classifier_input_width(self) -> int:
        return sum(self.widths.values())

    def segment_slices(self) -> dict:
        out, start = {}, 0
        for name, width in self.widths.items():
            out[name] = slice(start, start + width)
            start += width
        return out

    # -- parameters -------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        """Trainable arrays in declared (serialisation) order."""
        out = []
        for k, blk in enumerate(self.blocks, start=1):
            out += [(f"block{k}.{n}", getattr(blk, n)) for n in blk.param_names()]
        if self.mha_params is not None:
            out += [(f"mha.{n}", self.mha_params[n]) for n in ("wq", "wk", "wv", "wo")]
        out += [("fc.weights", self.fc_weights), ("fc.bias", self.fc_bias)]
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k, blk in enumerate(self.blocks, start=1):
            out += [(f"block{k}.bn_running_mean", blk.bn_running_mean),
                    (f"block{k}.bn_running_var", blk.bn_running_var)]
        return out

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return self.named_parameters() + self.named_buffers()

    # -- forward / backward -----------------------------------------------
    def forward(self, images, mode: str = "eval", update_stats: bool = True):
        """Returns ``(logits, cache)`` for a (B, H, W, C) batch."""
        x = np.asarray(images, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.config.input_shape:
            raise ShapeError(f"images {x.shape[1:]} do not match configured input {self.config.input_shape}")
        block_caches, tap_caches = [], {}
        sg_parts, skip_parts = [], []
        first_act = None
        for k, blk in enumerate(self.blocks, start=1):
            act, x, bc = blk.forward(x, mode, update_stats)
            block_caches.append(bc)
            if k in self.taps:
                scaled, attrs, tc = self.taps[k].forward(act)
                tap_caches[k] = tc
                sg_parts.append(scaled.reshape(len(x), -1))
                skip_parts.append(attrs.reshape(len(x), -1))
                if first_act is None:
                    first_act = act
        b = x.shape[0]
        parts = [x.reshape(b, -1)] + sg_parts
        if self.config.skip_connection:
            parts += skip_parts
        mha_cache = None
        if self.mha_params is not None:
            first = self.taps[min(self.taps)]
            feats = first.patch_means(first_act)
            keys = tap_caches[first.block].scaled
            out, mha_cache = mha_forward(keys, feats, self.mha_params, self.config.mha)
            parts.append(out.reshape(b, -1))
        features = np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]
        logits = nn.fc_forward(features, self.fc_weights, self.fc_bias)
        return logits, ForwardCache(block_caches, tap_caches, mha_cache, features, x.shape, self.widths)

    def backward(self, cache: ForwardCache, grad_logits) -> dict:
        """Gradients for every named parameter."""
        if cache.widths != self.widths or len(cache.block_caches) != len(self.blocks):
            raise ShapeError("cache does not belong to this model configuration")
        grads = {}
        g_feat, grads["fc.weights"], grads["fc.bias"] = nn.fc_backward(
            grad_logits.astype(self.dtype), cache.features, self.fc_weights
        )
        seg = {name: g_feat[:, s] for name, s in self.segment_slices().items()}
        b = g_feat.shape[0]
        g_scaled = {k: seg[f"sg{k}"].reshape(b, t.node_count, t.patch_size) for k, t in self.taps.items()}
        g_raw = {}
        for k, t in self.taps.items():
            v = seg.get(f"skip{k}")
            g_raw[k] = None if v is None else v.reshape(b, t.node_count, t.patch_size)
        g_act_extra = {}
        if self.mha_params is not None:
            first = self.taps[min(self.taps)]
            g_out = seg["mha"].reshape(b, first.node_count, -1)
            g_keys, g_feats, mg = mha_backward(g_out, cache.mha_cache)
            for n, g in mg.items():
                grads[f"mha.{n}"] = g
            g_scaled[first.block] = g_scaled[first.block] + g_keys
            act_shape = cache.tap_caches[first.block].act.shape
            g_act_extra[first.block] = first.patch_means_backward(g_feats, act_shape)
        g = seg["conv"].reshape(cache.last_shape)
        for k in range(len(self.blocks), 0, -1):
            g_act = None
            if k in self.taps:
                g_act = self.taps[k].backward(g_scaled[k], g_raw[k], cache.tap_caches[k])
                if k in g_act_extra:
                    g_act = g_act + g_act_extra[k]
            g, bg = self.blocks[k - 1].backward(g, cache.block_caches[k - 1], g_act)
            for n, v in bg.items():
                grads[f"block{k}.{n}"] = v
        return grads

    def apply_batch_stats(self, cache: ForwardCache, momentum: float = nn.BN_MOMENTUM):
        """Fold the batch statistics of a train-mode forward into the running stats."""
        for blk, bc in zip(self.blocks, cache.block_caches):
            bn_cache = bc[1]
            nn.update_running_stats(blk.bn_running_mean, blk.bn_running_var,
                                    bn_cache.batch_mean, bn_cache.batch_var, momentum)

    # -- inference helpers ------------------------------------------------
    def embed(self, images, batch_size: int = 256) -> np.ndarray:
        """Eval-mode classifier input vectors, (N, classifier_input_width)."""
        out = []
        for s in range(0, len(images), batch_size):
            out.append(self.forward(images[s : s + batch_size], "eval")[1].features)
        return np.concatenate(out, axis=0)

    def block_activations(self, images) -> list[np.ndarray]:
        """Eval-mode post-ReLU, pre-pool activation of every block."""
        x = np.asarray(images, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.config.input_shape:
            raise ShapeError(f"images {x.shape[1:]} do not match configured input {self.config.input_shape}")
        acts = []
        for blk in self.blocks:
            act, x, _ = blk.forward(x, "eval")
            acts.append(act)
        return acts

    def predict(self, images, batch_size: int = 256) -> np.ndarray:
        out = []
        for s in range(0, len(images), batch_size):
            out.append(self.forward(images[s : s + batch_size], "eval")[0].argmax(axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def accuracy(self, ds, batch_size: int = 256) -> float:
        if len(ds) == 0:
            return 0.0
        return float(np.mean(self.predict(ds.images, batch_size) == ds.labels))

    def copy(self) -> "SgnModel":
        other = SgnModel.__new__(SgnModel)
        other.__dict__.update(self.__dict__)
        other.blocks = [nn.ConvBlock(**{f: np.copy(getattr(b, f)) if isinstance(getattr(b, f), np.ndarray)
                                        else getattr(b, f) for f in b.__dataclass_fields__})
                        for b in self.blocks]
        other.mha_params = None if self.mha_params is None else {k: v.copy() for k, v in self.mha_params.items()}
        other.fc_weights = self.fc_weights.copy()
        other.fc_bias = self.fc_bias.copy()
        return other
