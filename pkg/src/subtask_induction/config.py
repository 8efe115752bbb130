"""Experiment configuration: JSON file schema, validation and dotted overrides.

A run config is a JSON object with the sections below; every key is optional
and falls back to the desk-scale defaults::

    {
      "model":      {"n_layers": 2, "n_heads": 4, "d_model": 128, "d_ff": 512,
                     "init_std": 0.02},
      "data":       {"modulus": 7, "input_max": 100, "base_train_fraction": 0.3,
                     "eval_size": 1000, "test_size": 1000,
                     "discovery_size": 8000, "coverage": true},
      "tasks":      {"base": "a+ab", "subtask": "ab", "target": "a^2+ab"},
      "base_train": {"epochs": 100, "lr": 5e-4, "batch_size": 64, ...},
      "sparsify":   {"beta_start": 1.0, "beta_final": 100.0, "mask_init": -0.1,
                     "lambda": [1e-7, 5e-7, 1e-8], "epochs": 50, "lr": 1e-3,
                     "batch_size": 64},
      "transfer":   {"epochs": 100, "lr": 2e-4, "batch_size": 32,
                     "weight_decay": 0.01, "unmasked": "copy-embeddings"},
      "sweep":      [0, 10, 30, 100, 300, 1000],
      "modes":      ["induction", "full-transfer", "random-subnet", "scratch"],
      "extra":      [{"mode": "induction-trainable", "sizes": [100]}],
      "seeds":      {"base": 0, "data": 1, "discovery": 2, "trials": [0, 1, 2]},
      "parallelism": 1,
      "output_dir": "runs/desk"
    }

Overrides use dotted paths, e.g. ``sparsify.lambda=1e-7`` or
``sweep=[0,100]``; values are parsed as JSON when possible.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .model import ModelConfig
from .sparsify import SparsifyConfig
from .tasks import TaskSpec
from .training import TrainConfig
from .transfer import MODES

UNMASKED_POLICIES = ("reinit", "copy-embeddings", "copy")
OUTPUT_ENV = "SUBTASK_INDUCTION_OUTPUT"


class ConfigError(ValueError):
    """Malformed configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


DEFAULTS: dict = {
    "model": {"n_layers": 2, "n_heads": 4, "d_model": 128, "d_ff": 512, "init_std": 0.02},
    "data": {"modulus": 7, "input_max": 100, "base_train_fraction": 0.3,
             "eval_size": 1000, "test_size": 1000, "discovery_size": 8000,
             "coverage": True},
    "tasks": {"base": "a+ab", "subtask": "ab", "target": "a^2+ab"},
    "base_train": {"epochs": 100, "lr": 5e-4, "batch_size": 64, "weight_decay": 0.01,
                   "betas": [0.9, 0.999], "optimizer": "adamw", "momentum": 0.9},
    "sparsify": {"beta_start": 1.0, "beta_final": 100.0, "mask_init": -0.1,
                 "lambda": [1e-7, 5e-7, 1e-8], "epochs": 50, "lr": 1e-3,
                 "batch_size": 64},
    "transfer": {"epochs": 100, "lr": 2e-4, "batch_size": 32, "weight_decay": 0.01,
                 "betas": [0.9, 0.999], "optimizer": "adamw", "momentum": 0.9,
                 "unmasked": "copy-embeddings"},
    "sweep": [0, 10, 30, 100, 300, 1000],
    "modes": ["induction", "full-transfer", "random-subnet", "scratch"],
    "extra": [],
    "seeds": {"base": 0, "data": 1, "discovery": 2, "trials": [0, 1, 2]},
    "parallelism": 1,
    "output_dir": "runs/desk",
}

_LEAF_TYPES = {
    "model.n_layers": int, "model.n_heads": int, "model.d_model": int, "model.d_ff": int,
    "model.init_std": float,
    "data.modulus": int, "data.input_max": int, "data.base_train_fraction": float,
    "data.eval_size": int, "data.test_size": int, "data.discovery_size": int,
    "data.coverage": bool,
    "tasks.base": str, "tasks.subtask": str, "tasks.target": str,
    "sparsify.beta_start": float, "sparsify.beta_final": float,
    "sparsify.mask_init": float, "sparsify.lambda": list, "sparsify.epochs": int,
    "sparsify.lr": float, "sparsify.batch_size": int,
    "sweep": list, "modes": list, "extra": list,
    "seeds.base": int, "seeds.data": int, "seeds.discovery": int, "seeds.trials": list,
    "parallelism": int, "output_dir": str, "transfer.unmasked": str,
}
for _section in ("base_train", "transfer"):
    _LEAF_TYPES.update({
        f"{_section}.epochs": int, f"{_section}.lr": float,
        f"{_section}.batch_size": int, f"{_section}.weight_decay": float,
        f"{_section}.betas": list, f"{_section}.optimizer": str,
        f"{_section}.momentum": float,
    })


def _coerce(path: str, value: Any) -> Any:
    kind = _LEAF_TYPES[path]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is bool and isinstance(value, bool):
        return value
    if kind is str and isinstance(value, str):
        return value
    if kind is list:
        if path == "sparsify.lambda" and isinstance(value, (int, float)) and not isinstance(value, bool):
            return [float(value)]
        if isinstance(value, list):
            return value
    raise ConfigError(path, f"expected {kind.__name__}, got {value!r}")


def _merge(base: dict, update: Mapping, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(path, "expected a section (object)")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = _coerce(path, value)
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.raw = _merge(DEFAULTS, self.raw)
        self.validate()

    # typed views -----------------------------------------------------------
    @property
    def model(self) -> ModelConfig:
        m = self.raw["model"]
        return ModelConfig(n_layers=m["n_layers"], n_heads=m["n_heads"], d_model=m["d_model"],
                           d_ff=m["d_ff"], vocab_size=self.raw["data"]["input_max"] + 1,
                           init_std=m["init_std"])

    def task(self, role: str) -> TaskSpec:
        d = self.raw["data"]
        return TaskSpec.parse(self.raw["tasks"][role], d["modulus"], d["input_max"])

    @property
    def base_train(self) -> TrainConfig:
        return _train_cfg(self.raw["base_train"])

    @property
    def transfer_train(self) -> TrainConfig:
        return _train_cfg(self.raw["transfer"])

    @property
    def unmasked(self) -> str:
        return self.raw["transfer"]["unmasked"]

    @property
    def sparsify(self) -> SparsifyConfig:
        s = self.raw["sparsify"]
        return SparsifyConfig(beta_start=s["beta_start"], beta_final=s["beta_final"],
                              mask_init=s["mask_init"], lambdas=tuple(s["lambda"]),
                              epochs=s["epochs"], lr=s["lr"], batch_size=s["batch_size"])

    @property
    def output_dir(self) -> Path:
        out = Path(self.raw["output_dir"])
        root = os.environ.get(OUTPUT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    # validation ------------------------------------------------------------
    def validate(self) -> None:
        try:
            self.model
        except ValueError as e:
            raise ConfigError("model", str(e)) from None
        d = self.raw["data"]
        if not 0 < d["base_train_fraction"] <= 1:
            raise ConfigError("data.base_train_fraction", "must be in (0, 1]")
        if d["input_max"] < d["modulus"]:
            raise ConfigError("data.input_max", "must be >= modulus (answers reuse number tokens)")
        for role in ("base", "subtask", "target"):
            try:
                self.task(role)
            except ValueError as e:
                raise ConfigError(f"tasks.{role}", str(e)) from None
        for name, prop in (("base_train", "base_train"), ("transfer", "transfer_train"),
                           ("sparsify", "sparsify")):
            try:
                getattr(self, prop)
            except (ValueError, TypeError) as e:
                raise ConfigError(name, str(e)) from None
        if self.unmasked not in UNMASKED_POLICIES:
            raise ConfigError("transfer.unmasked", f"must be one of {UNMASKED_POLICIES}")
        sweep = self.raw["sweep"]
        if not all(isinstance(x, int) and x >= 0 for x in sweep):
            raise ConfigError("sweep", "sizes must be non-negative integers")
        if any(b <= a for a, b in zip(sweep, sweep[1:])):
            raise ConfigError("sweep", "sizes must be strictly increasing")
        for i, m in enumerate(self.raw["modes"]):
            if m not in MODES:
                raise ConfigError(f"modes[{i}]", f"unknown mode {m!r}")
        for i, e in enumerate(self.raw["extra"]):
            if not isinstance(e, dict) or set(e) != {"mode", "sizes"} or e["mode"] not in MODES:
                raise ConfigError(f"extra[{i}]", "expected {\"mode\": <mode>, \"sizes\": [...]}")
        if not all(isinstance(s, int) for s in self.raw["seeds"]["trials"]):
            raise ConfigError("seeds.trials", "expected a list of integers")
        if self.raw["parallelism"] < 1:
            raise ConfigError("parallelism", "must be >= 1")

    # serialisation ---------------------------------------------------------
    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def dumps(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(str(path), f"invalid JSON ({e})") from None
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be an object")
        return cls(data)

    def with_overrides(self, overrides: Sequence[str]) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(item, "override must look like key.path=value")
            path, text = item.split("=", 1)
            path = path.strip()
            if path not in _LEAF_TYPES:
                raise ConfigError(path, "unknown key")
            try:
                value = json.loads(text)
            except json.JSONDecodeError:
                value = text
            node = raw
            *parents, leaf = path.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = _coerce(path, value)
        return ExperimentConfig(raw)


def _train_cfg(d: Mapping) -> TrainConfig:
    return TrainConfig(epochs=d["epochs"], lr=d["lr"], batch_size=d["batch_size"],
                       weight_decay=d["weight_decay"], betas=tuple(d["betas"]),
                       optimizer=d["optimizer"], momentum=d["momentum"])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def mix_seed(*parts) -> int:
    """Derive an independent 63-bit seed from labelled parts via SHA-256."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
