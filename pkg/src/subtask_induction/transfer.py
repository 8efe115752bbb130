"""Subnetwork transplantation and the control conditions it is compared to."""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import numerics as nx
from .model import ModelConfig, answer_accuracy, build_model, copy_params
from .sparsify import BinaryMask, subnet_stats
from .training import TrainConfig, train

MODES = ("induction", "induction-trainable", "full-transfer", "random-subnet",
         "complement-subnet", "scratch")
MASKED_MODES = ("induction", "induction-trainable", "random-subnet", "complement-subnet")
EMBEDDING_GROUPS = ("tok_embed", "pos_embed")


@dataclass
class TransferPlan:
    mode: str
    reinit_seed: int
    mask: Optional[BinaryMask] = None
    source_id: str = ""
    freeze: Optional[bool] = None
    control_seed: Optional[int] = None
    unmasked: str = "copy-embeddings"

    def __post_init__(self):
        if self.unmasked not in ("reinit", "copy-embeddings", "copy"):
            raise ValueError(f"unknown unmasked-group policy {self.unmasked!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown transfer mode {self.mode!r}; expected one of {MODES}")
        if self.mode in MASKED_MODES and self.mask is None:
            raise ValueError(f"mode {self.mode!r} needs a reference mask")
        if self.freeze is None:
            self.freeze = self.mode in ("induction", "random-subnet", "complement-subnet")


@dataclass
class MixedParams:
    params: "OrderedDict[str, np.ndarray]"
    trainable: dict = field(default_factory=dict)  # name -> bool array or bool


def transplant(original: Mapping[str, np.ndarray], mask: BinaryMask, config: ModelConfig,
               reinit_seed: int, freeze: bool = True,
               unmasked: str = "reinit") -> MixedParams:
    """``gamma * theta_original + (1 - gamma) * theta_new`` per masked group.

    Groups outside the mask are always trainable.  ``unmasked`` chooses where
    they start: ``"reinit"`` (fresh), ``"copy-embeddings"`` (token and
    position embeddings from ``original``, the rest fresh) or ``"copy"``.
    """
    fresh = build_model(config, reinit_seed)
    if unmasked == "copy":
        for name in fresh:
            if name not in mask.masks:
                fresh[name] = original[name].copy()
    elif unmasked == "copy-embeddings":
        for name in EMBEDDING_GROUPS:
            fresh[name] = original[name].copy()
    elif unmasked != "reinit":
        raise ValueError(f"unknown unmasked-group policy {unmasked!r}")
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    trainable: dict = {}
    for name, new in fresh.items():
        if name in mask.masks:
            gamma = mask.masks[name]
            if gamma.shape != new.shape or original[name].shape != new.shape:
                raise ValueError(f"mask/parameter shape mismatch for {name}")
            params[name] = np.where(gamma, original[name], new)
            trainable[name] = ~gamma if freeze else True
        else:
            params[name] = new
            trainable[name] = True
    for name in mask.masks:
        if name not in fresh:
            raise ValueError(f"mask refers to unknown parameter group {name}")
    return MixedParams(params, trainable)


def sample_random_subnet(reference: BinaryMask, seed: int) -> BinaryMask:
    """Per group, keep exactly as many uniformly chosen entries as the reference.

    An empty reference gives an empty sample.
    """
    rng = nx.seeded_rng(seed)
    out = OrderedDict()
    for name, ref in reference.masks.items():
        k = int(ref.sum())
        flat = np.zeros(ref.size, dtype=bool)
        if k:
            flat[rng.choice(ref.size, size=k, replace=False)] = True
        out[name] = flat.reshape(ref.shape)
    return BinaryMask(out)


def sample_complement_subnet(reference: BinaryMask, seed: int) -> BinaryMask:
    """Same per-group counts, drawn only where the reference excludes weights."""
    rng = nx.seeded_rng(seed)
    out = OrderedDict()
    for name, ref in reference.masks.items():
        k = int(ref.sum())
        free = np.flatnonzero(~ref.reshape(-1))
        if k > free.size:
            raise ValueError(f"complement of {name} has {free.size} entries, need {k}")
        flat = np.zeros(ref.size, dtype=bool)
        if k:
            flat[rng.choice(free, size=k, replace=False)] = True
        out[name] = flat.reshape(ref.shape)
    return BinaryMask(out)


def prepare(plan: TransferPlan, original: Mapping[str, np.ndarray],
            config: ModelConfig) -> tuple[MixedParams, Optional[BinaryMask]]:
    """Initial parameters, trainability map and the mask actually transferred."""
    if plan.mode == "scratch":
        fresh = build_model(config, plan.reinit_seed)
        return MixedParams(fresh, {k: True for k in fresh}), None
    if plan.mode == "full-transfer":
        params = copy_params(original)
        return MixedParams(params, {k: True for k in params}), None
    control_seed = plan.reinit_seed if plan.control_seed is None else plan.control_seed
    if plan.mode == "random-subnet":
        mask = sample_random_subnet(plan.mask, control_seed)
    elif plan.mode == "complement-subnet":
        mask = sample_complement_subnet(plan.mask, control_seed)
    else:
        mask = plan.mask
    return (transplant(original, mask, config, plan.reinit_seed, plan.freeze, plan.unmasked),
            mask)


def run_transfer(plan: TransferPlan, original: Mapping[str, np.ndarray], config: ModelConfig,
                 train_tokens: np.ndarray, eval_tokens: np.ndarray, test_tokens: np.ndarray,
                 cfg: TrainConfig, seed: int, check_every_epoch: bool = False) -> dict:
    """Train one transfer condition; report test accuracy of the best-eval epoch."""
    t0 = time.time()
    mixed, mask = prepare(plan, original, config)
    result = train(mixed.params, config, train_tokens, eval_tokens, cfg, seed,
                   trainable=mixed.trainable, check_every_epoch=check_every_epoch)
    test_acc = answer_accuracy(result.params, test_tokens, config)
    stats = None
    if mask is not None:
        s = subnet_stats(mask)
        stats = {"kept": s["kept"], "total": s["total"], "density": s["density"]}
    return {
        "mode": plan.mode,
        "history": result.history,
        "best_epoch": result.best_epoch,
        "best_eval_acc": result.best_eval,
        "test_acc": test_acc,
        "subnet": stats,
        "wall_clock": time.time() - t0,
        "final_params": mixed.params,
        "best_params": result.params,
    }
