"""SGD training loop with step learning-rate decay and per-epoch metrics."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import nn
from .data import Dataset, make_batches
from .errors import ConfigError, NumericError
from .model import SgnModel

_NO_DECAY = ("bias", "bn_gamma", "bn_beta")


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 64
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_step: int = 2  # epochs between decays
    lr_gamma: float = 0.3
    seed: int = 0
    threads: int = 1
    timing: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 2 or self.threads < 1 or self.lr_step < 1:
            raise ConfigError("epochs >= 0, batch_size >= 2, threads >= 1 and lr_step >= 1 required")
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("lr, momentum or weight_decay out of range")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_gamma ** (epoch // self.lr_step)


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def make_param_grads(model: SgnModel) -> list[nn.ParamGrad]:
    return [
        nn.ParamGrad(name, arr, np.zeros_like(arr), decay=not name.endswith(_NO_DECAY))
        for name, arr in model.named_parameters()
    ]


def _shard_step(model: SgnModel, images, labels):
    logits, cache = model.forward(images, "train", update_stats=False)
    loss, g = nn.cross_entropy(logits, labels)
    return loss, model.backward(cache, g), cache


def train_step(model: SgnModel, params: list[nn.ParamGrad], images, labels, lr, cfg: TrainConfig,
               pool: ThreadPoolExecutor | None = None) -> float:
    """One forward/backward/update on a batch; returns the batch loss."""
    shards = cfg.threads if pool is not None else 1
    if shards > 1 and len(labels) >= 2 * shards:
        parts = np.array_split(np.arange(len(labels)), shards)
        results = list(pool.map(lambda idx: _shard_step(model, images[idx], labels[idx]), parts))
        n = len(labels)
        loss = sum(r[0] * len(idx) / n for r, idx in zip(results, parts))
        grads = {}
        for (_, g, _), idx in zip(results, parts):  # fixed reduction order
            w = len(idx) / n
            for name, v in g.items():
                grads[name] = grads[name] + w * v if name in grads else w * v
        for _, _, cache in results:
            model.apply_batch_stats(cache)
    else:
        logits, cache = model.forward(images, "train", update_stats=True)
        loss, g = nn.cross_entropy(logits, labels)
        grads = model.backward(cache, g)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite training loss {loss}")
    for pg in params:
        pg.grad = grads[pg.name].astype(pg.param.dtype, copy=False)
    nn.sgd_step(params, lr, cfg.momentum, cfg.weight_decay)
    return float(loss)


def train_loop(model: SgnModel, train_ds: Dataset, test_ds: Dataset | None, cfg: TrainConfig) -> Iterator[dict]:
    """Yield one metrics record per epoch: epoch, train_loss, test_acc, seconds."""
    params = make_param_grads(model)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr = cfg.lr_at(epoch)
            total, count = 0.0, 0
            for batch in make_batches(train_ds, cfg.batch_size, epoch_seed(cfg.seed, epoch), shuffle=True):
                if len(batch.labels) < 2:  # batch norm needs two samples
                    continue
                loss = train_step(model, params, batch.images, batch.labels, lr, cfg, pool)
                total += loss * len(batch.labels)
                count += len(batch.labels)
            acc = model.accuracy(test_ds) if test_ds is not None and len(test_ds) else None
            yield {
                "epoch": epoch + 1,
                "train_loss": total / max(count, 1),
                "test_acc": acc,
                "seconds": round(time.perf_counter() - t0, 3) if cfg.timing else None,
            }
    finally:
        if pool is not None:
            pool.shutdown()
