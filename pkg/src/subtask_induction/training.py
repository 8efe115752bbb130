"""Minibatch training with best-on-eval checkpoint selection."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from . import numerics as nx
from .model import ModelConfig, answer_accuracy, copy_params, sequence_loss


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 2e-4
    batch_size: int = 32
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    optimizer: str = "adamw"
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError("optimizer must be 'adamw' or 'sgd'")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainResult:
    params: "dict[str, np.ndarray]"
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_eval: float = float("nan")


class FrozenWeightError(AssertionError):
    """A parameter entry flagged frozen changed during training."""


def make_optimizer(params, cfg: TrainConfig, trainable=None):
    if cfg.optimizer == "sgd":
        return nx.SGDMomentum(params, lr=cfg.lr, momentum=cfg.momentum,
                              weight_decay=cfg.weight_decay, trainable=trainable)
    return nx.AdamW(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay,
                    trainable=trainable)


def _frozen_snapshot(params, trainable):
    if trainable is None:
        return {}
    snap = {}
    for name, flag in trainable.items():
        if isinstance(flag, np.ndarray):
            if not flag.all():
                snap[name] = params[name][~flag].copy()
        elif flag is False:
            snap[name] = params[name].copy()
    return snap


def check_frozen(params, trainable, snapshot) -> None:
    for name, before in snapshot.items():
        flag = trainable[name]
        now = params[name][~flag] if isinstance(flag, np.ndarray) else params[name]
        if not np.array_equal(now.view(np.uint32), before.view(np.uint32)):
            raise FrozenWeightError(f"frozen entries of {name} changed")


def train(params: dict, config: ModelConfig, train_tokens: np.ndarray,
          eval_tokens: Optional[np.ndarray], cfg: TrainConfig, seed: int,
          trainable: Optional[Mapping[str, np.ndarray | bool]] = None,
          check_every_epoch: bool = False,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train ``params`` in place and return a copy of the best-eval checkpoint.

    Ties in eval accuracy keep the earliest epoch.  Without an eval set the
    final parameters are returned.
    """
    train_tokens = np.asarray(train_tokens, dtype=np.int64)
    if train_tokens.shape[0] == 0:
        raise ValueError("empty training set")
    rng = nx.seeded_rng(seed)
    opt = make_optimizer(params, cfg, trainable)
    snapshot = _frozen_snapshot(params, trainable)
    names = [k for k, f in opt.trainable.items() if f is not False]
    result = TrainResult(params={})
    best = -1.0
    n = train_tokens.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = train_tokens[order[start:start + cfg.batch_size]]
            leaves = nx.leaves(params, names=names)
            loss = sequence_loss(leaves, batch, config)
            nx.backward(loss)
            opt.step({k: leaves[k].grad for k in names})
            total += float(loss.data) * len(batch)
            count += len(batch)
        if check_every_epoch:
            check_frozen(params, trainable, snapshot)
        row = {"epoch": epoch, "train_loss": total / count}
        if eval_tokens is not None and len(eval_tokens):
            acc = answer_accuracy(params, eval_tokens, config)
            row["eval_acc"] = acc
            if acc > best:
                best = acc
                result.best_epoch = epoch
                result.params = copy_params(params)
        result.history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    check_frozen(params, trainable, snapshot)
    if eval_tokens is None or not len(eval_tokens):
        result.params = copy_params(params)
        result.best_epoch = cfg.epochs - 1
    result.best_eval = best
    return result
