"""Continuous sparsification: soft masks sigma(beta*s) annealed into binary masks.

Only the mask logits ``s`` are trained; the base parameters stay untouched
(checked bit-exactly every epoch).
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import numerics as nx
from .model import ModelConfig, answer_accuracy, is_maskable, sequence_loss

log = logging.getLogger(__name__)


@dataclass
class SparsifyConfig:
    beta_start: float = 1.0
    beta_final: float = 100.0
    mask_init: float = -0.1
    lambdas: tuple[float, ...] = (1e-7, 5e-7, 1e-8)
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 64

    def __post_init__(self):
        if not (self.beta_final > self.beta_start > 0):
            raise ValueError("need beta_final > beta_start > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if isinstance(self.lambdas, (int, float)):
            self.lambdas = (float(self.lambdas),)
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if not self.lambdas or any(x < 0 for x in self.lambdas):
            raise ValueError("lambdas must be a non-empty list of non-negative values")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d


@dataclass
class MaskState:
    logits: "OrderedDict[str, np.ndarray]"
    beta: float
    lam: float
    config: SparsifyConfig

    def soft(self) -> dict[str, np.ndarray]:
        return {k: nx._sigmoid(self.beta * s) for k, s in self.logits.items()}


@dataclass
class BinaryMask:
    masks: "OrderedDict[str, np.ndarray]"  # bool arrays

    def __post_init__(self):
        self.masks = OrderedDict((k, np.asarray(v, dtype=bool)) for k, v in self.masks.items())

    def counts(self) -> dict[str, int]:
        return {k: int(v.sum()) for k, v in self.masks.items()}

    @property
    def kept(self) -> int:
        return int(sum(v.sum() for v in self.masks.values()))

    @property
    def total(self) -> int:
        return int(sum(v.size for v in self.masks.values()))

    @property
    def density(self) -> float:
        return self.kept / self.total if self.total else 0.0

    def override(self, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Effective parameters of the subnetwork, ``theta * gamma``."""
        return {k: params[k] * m.astype(params[k].dtype) for k, m in self.masks.items()}

    def __eq__(self, other):
        if not isinstance(other, BinaryMask) or list(self.masks) != list(other.masks):
            return False
        return all(np.array_equal(self.masks[k], other.masks[k]) for k in self.masks)


def default_filter(name: str) -> bool:
    return is_maskable(name)


def init_mask(params: Mapping[str, np.ndarray], config: SparsifyConfig,
              lam: Optional[float] = None,
              filter: Callable[[str], bool] = default_filter) -> MaskState:
    logits = OrderedDict(
        (k, np.full(v.shape, config.mask_init, dtype=nx.DTYPE))
        for k, v in params.items() if filter(k)
    )
    if not logits:
        raise ValueError("mask filter selected no parameter groups")
    return MaskState(logits, config.beta_start,
                     config.lambdas[0] if lam is None else lam, config)


def schedule_beta(epoch: int, config: SparsifyConfig) -> float:
    """Exponential anneal from ``beta_start`` (epoch 0) to ``beta_final`` (epoch n)."""
    n = config.epochs
    if not 0 <= epoch <= n:
        raise ValueError(f"epoch {epoch} outside [0, {n}]")
    ratio = config.beta_final / config.beta_start
    return config.beta_start * ratio ** (epoch / n)


def effective_params(params, mask: MaskState, logit_leaves=None) -> dict:
    """``theta * sigma(beta*s)`` for masked groups; other groups pass through.

    With ``logit_leaves`` (graph leaves for ``s``) the result is differentiable
    with respect to the mask logits.
    """
    out = dict(params)
    for k, s in mask.logits.items():
        src = s if logit_leaves is None else logit_leaves[k]
        gate = nx.sigmoid(nx.scale(src, mask.beta))
        if logit_leaves is None:
            out[k] = params[k] * gate.data
        else:
            out[k] = nx.mul(gate, params[k])
    return out


def l0_penalty(mask: MaskState, logit_leaves=None) -> nx.Tensor:
    """``lam * sum(sigma(beta*s))`` over every masked entry."""
    total = None
    for k, s in mask.logits.items():
        src = s if logit_leaves is None else logit_leaves[k]
        term = nx.sum_all(nx.sigmoid(nx.scale(src, mask.beta)))
        total = term if total is None else nx.add(total, term)
    return nx.scale(total, mask.lam)


def _penalized_override(params, mask: MaskState, logit_leaves):
    """Soft-masked weights and the penalty, sharing one sigmoid per group."""
    override, total = {}, None
    for k in mask.logits:
        gate = nx.sigmoid(nx.scale(logit_leaves[k], mask.beta))
        override[k] = nx.mul(gate, params[k])
        term = nx.sum_all(gate)
        total = term if total is None else nx.add(total, term)
    return override, nx.scale(total, mask.lam)


def binarize(mask: MaskState) -> BinaryMask:
    """Hard mask ``s > 0``; ties at exactly zero are excluded."""
    return BinaryMask(OrderedDict((k, s > 0) for k, s in mask.logits.items()))


def subnet_stats(mask: BinaryMask, params: Mapping[str, np.ndarray] | None = None) -> dict:
    groups = OrderedDict()
    for k, m in mask.masks.items():
        if params is not None and params[k].shape != m.shape:
            raise ValueError(f"mask for {k} does not match its parameter")
        kept, total = int(m.sum()), int(m.size)
        groups[k] = {"kept": kept, "total": total, "fraction": kept / total if total else 0.0}
    layers: OrderedDict[str, dict] = OrderedDict()
    for k, g in groups.items():
        layer = k.split(".")[0]
        agg = layers.setdefault(layer, {"kept": 0, "total": 0})
        agg["kept"] += g["kept"]
        agg["total"] += g["total"]
    for agg in layers.values():
        agg["fraction"] = agg["kept"] / agg["total"] if agg["total"] else 0.0
    return {"groups": groups, "layers": layers, "kept": mask.kept, "total": mask.total,
            "density": mask.density}


def _snapshot(params):
    return {k: v.copy() for k, v in params.items()}


def _assert_untouched(params, snap) -> None:
    for k, v in snap.items():
        if not np.array_equal(params[k].view(np.uint32), v.view(np.uint32)):
            raise AssertionError(f"base parameter {k} was modified during discovery")


@dataclass
class DiscoveryResult:
    mask: BinaryMask
    lam: float
    epoch: int
    eval_acc: float
    density: float
    history: list = field(default_factory=list)
    candidates: list = field(default_factory=list)


def discover_one(params, config: ModelConfig, train_tokens: np.ndarray,
                 eval_tokens: np.ndarray, scfg: SparsifyConfig, lam: float, seed: int,
                 filter: Callable[[str], bool] = default_filter,
                 on_epoch: Optional[Callable[[dict], None]] = None) -> DiscoveryResult:
    """Train mask logits for one penalty value and keep the best binarized epoch."""
    train_tokens = np.asarray(train_tokens, dtype=np.int64)
    snap = _snapshot(params)
    mask = init_mask(params, scfg, lam=lam, filter=filter)
    opt = nx.AdamW(mask.logits, lr=scfg.lr, weight_decay=0.0)
    rng = nx.seeded_rng(seed)
    frozen = {k: nx.Tensor(v) for k, v in params.items()}
    n = train_tokens.shape[0]
    best: Optional[DiscoveryResult] = None
    history = []
    for epoch in range(scfg.epochs):
        mask.beta = schedule_beta(epoch, scfg)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, scfg.batch_size):
            batch = train_tokens[order[start:start + scfg.batch_size]]
            s_leaves = nx.leaves(mask.logits)
            override, penalty = _penalized_override(params, mask, s_leaves)
            loss = nx.add(sequence_loss(frozen, batch, config, override), penalty)
            nx.backward(loss)
            opt.step({k: t.grad for k, t in s_leaves.items()})
            total += float(loss.data) * len(batch)
            count += len(batch)
        _assert_untouched(params, snap)
        hard = binarize(mask)
        acc = answer_accuracy(params, eval_tokens, config, hard.override(params))
        row = {"lambda": lam, "epoch": epoch, "beta": mask.beta, "loss": total / count,
               "eval_acc": acc, "density": hard.density}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if best is None or acc > best.eval_acc or (acc == best.eval_acc and hard.density < best.density):
            best = DiscoveryResult(hard, lam, epoch, acc, hard.density)
    best.history = history
    return best


def discover(params, config: ModelConfig, train_tokens: np.ndarray, eval_tokens: np.ndarray,
             scfg: SparsifyConfig, seed: int = 0,
             filter: Callable[[str], bool] = default_filter,
             on_epoch: Optional[Callable[[dict], None]] = None) -> DiscoveryResult:
    """Run discovery for each penalty in the grid; best eval accuracy wins,
    ties go to the sparser mask."""
    results = [discover_one(params, config, train_tokens, eval_tokens, scfg, lam, seed,
                            filter, on_epoch) for lam in scfg.lambdas]
    best = results[0]
    for r in results[1:]:
        if r.eval_acc > best.eval_acc or (r.eval_acc == best.eval_acc and r.density < best.density):
            best = r
    best.candidates = [{"lambda": r.lam, "epoch": r.epoch, "eval_acc": r.eval_acc,
                        "density": r.density} for r in results]
    history = []
    for r in results:
        history.extend(r.history)
    best.history = history
    return best
