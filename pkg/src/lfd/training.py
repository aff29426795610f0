"""Mini-batch SGD with momentum for the descriptor network."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .descriptor import (Batch, DescriptorNet, LossConfig, NetConfig, TrainSample,
                         encode_many, loss_and_grad)
from .errors import ConfigurationError, DatasetError
from .render import PREDICTED

log = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "lr", "total", "softmax", "center", "tcl", "fm")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    milestones: tuple = (150, 250)
    lr_factor: float = 5.0
    # predicted : rendered rows per batch
    ratio: tuple = (1, 3)
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        self.ratio = tuple(int(r) for r in self.ratio)
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.lr_factor <= 0:
            raise ConfigurationError("epochs, batch size, learning rate and factor must be positive")
        if len(self.ratio) != 2 or min(self.ratio) < 0 or sum(self.ratio) == 0:
            raise ConfigurationError(f"bad predicted:rendered ratio {self.ratio}")

    def lr_at(self, epoch: int) -> float:
        drops = sum(epoch >= m for m in self.milestones)
        return self.lr / self.lr_factor ** drops


def _split_batch(cfg: TrainConfig, n_pred: int, n_rend: int):
    """Rows per batch taken from each domain."""
    if n_pred == 0:
        return 0, cfg.batch_size
    if n_rend == 0:
        return cfg.batch_size, 0
    p, r = cfg.ratio
    k_pred = int(round(cfg.batch_size * p / (p + r)))
    return k_pred, cfg.batch_size - k_pred


class _Cycle:
    """Endless reshuffled pass over an index pool."""

    def __init__(self, n, rng):
        self.n, self.rng = n, rng
        self.order, self.pos = rng.permutation(n), 0

    def take(self, k):
        out = []
        while len(out) < k:
            if self.pos == self.n:
                self.order, self.pos = self.rng.permutation(self.n), 0
            j = min(k - len(out), self.n - self.pos)
            out.extend(self.order[self.pos:self.pos + j])
            self.pos += j
        return np.array(out, dtype=int)


def train(dataset, cfg: TrainConfig, seed: int | None = None, net: DescriptorNet | None = None,
          net_cfg: NetConfig | None = None, loss_cfg: LossConfig | None = None,
          on_epoch=None) -> DescriptorNet:
    """Train on a list of :class:`TrainSample`; returns the network.

    Each epoch is one shuffled pass over the rendered samples; every batch is
    topped up with predicted samples at ``cfg.ratio``, drawn from a reshuffled
    cycle. The per-epoch loss curve is stored on ``net.history``.
    """
    seed = cfg.seed if seed is None else seed
    dataset = list(dataset)
    if not dataset:
        raise DatasetError("empty training set")
    ys = np.array([s.y for s in dataset], dtype=int)
    if net is None:
        K = int(ys.max()) + 1
        net_cfg = net_cfg or NetConfig(n_models=K)
        if net_cfg.n_models != K:
            net_cfg.n_models = K
        net = DescriptorNet.init(net_cfg, loss_cfg, seed)
    K = net.K
    if ys.min() < 0 or ys.max() >= K:
        raise DatasetError(f"model index outside [0, {K})")
    missing = sorted(set(range(K)) - set(ys.tolist()))
    if missing:
        raise DatasetError(f"no training samples for model indices {missing[:10]}")

    pred = np.array([s.lf.domain == PREDICTED for s in dataset])
    X = encode_many([s.lf for s in dataset], net.cfg)
    Xp_all = np.zeros_like(X)
    if pred.any():
        Xp_all[pred] = encode_many([s.paired for s in dataset if s.paired is not None], net.cfg)
    rend_idx, pred_idx = np.flatnonzero(~pred), np.flatnonzero(pred)
    k_pred, k_rend = _split_batch(cfg, len(pred_idx), len(rend_idx))

    rng = np.random.default_rng([seed, 0x7a])
    main_idx = rend_idx if k_rend else pred_idx
    side = _Cycle(len(pred_idx), rng) if (k_rend and k_pred) else None
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = main_idx[rng.permutation(len(main_idx))]
        step = k_rend if k_rend else k_pred
        sums = dict.fromkeys(("total", "softmax", "center", "tcl", "fm"), 0.0)
        n_batches = math.ceil(len(order) / step)
        for bi in range(n_batches):
            rows = order[bi * step:(bi + 1) * step]
            if side is not None:
                rows = np.concatenate([rows, pred_idx[side.take(k_pred)]])
            pr = pred[rows]
            batch = Batch(X[rows], ys[rows], pr, Xp_all[rows[pr]])
            total, parts, g = loss_and_grad(net, batch)
            if not np.isfinite(total):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            sums["total"] += total
            for k in parts:
                sums[k] += parts[k]
            for k, v in net.params.items():
                buf = velocity[k]
                buf *= cfg.momentum
                buf += g[k]
                v -= lr * buf
        row = {"epoch": epoch, "lr": lr, **{k: s / n_batches for k, s in sums.items()}}
        history.append(row)
        log.debug("epoch %d lr %.2e loss %.4f", epoch, lr, row["total"])
        if on_epoch is not None:
            on_epoch(row)
    net.history = history
    return net
