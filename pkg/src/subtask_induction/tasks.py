"""Modular polynomial tasks over two inputs and their datasets.

A task is ``sum(coef * a**i * b**j) mod p``.  Rows are encoded as the four
tokens ``[a, b, sep, answer]`` with ``sep = input_max``; answers reuse the
number tokens ``0..p-1``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .numerics import seeded_rng

Term = tuple[int, int, int]  # (coefficient, power of a, power of b)

_TERM_RE = re.compile(r"([+-]?)\s*(\d*)\s*((?:[ab](?:\^\d+)?)*)")


@dataclass(frozen=True)
class TaskSpec:
    terms: tuple[Term, ...]
    modulus: int = 7
    input_max: int = 100

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a task needs at least one term")
        if self.modulus < 2:
            raise ValueError("modulus must be >= 2")
        if self.input_max < 1:
            raise ValueError("input_max must be >= 1")
        for c, i, j in self.terms:
            if i < 0 or j < 0:
                raise ValueError("powers must be non-negative")
        object.__setattr__(self, "terms", tuple(tuple(int(x) for x in t) for t in self.terms))

    @classmethod
    def parse(cls, expr: str, modulus: int = 7, input_max: int = 100) -> "TaskSpec":
        """Parse expressions such as ``"a+ab"``, ``"a^2 - b^2"``, ``"2a^2"``."""
        return cls(parse_terms(expr), modulus, input_max)

    @property
    def expr(self) -> str:
        return format_terms(self.terms)

    @property
    def sep_id(self) -> int:
        return self.input_max

    @property
    def vocab_size(self) -> int:
        return self.input_max + 1

    def __call__(self, a, b):
        return eval_task(self, a, b)

    def to_dict(self) -> dict:
        return {"expr": self.expr, "modulus": self.modulus, "input_max": self.input_max}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskSpec":
        if "terms" in d:
            return cls(tuple(tuple(t) for t in d["terms"]), d.get("modulus", 7),
                       d.get("input_max", 100))
        return cls.parse(d["expr"], d.get("modulus", 7), d.get("input_max", 100))


def parse_terms(expr: str) -> tuple[Term, ...]:
    s = expr.replace(" ", "")
    if not s:
        raise ValueError("empty expression")
    terms: list[Term] = []
    pos = 0
    while pos < len(s):
        m = _TERM_RE.match(s, pos)
        if m is None or m.end() == pos:
            raise ValueError(f"cannot parse task expression {expr!r} at {pos}")
        sign, coef, factors = m.groups()
        if not coef and not factors:
            raise ValueError(f"cannot parse task expression {expr!r} at {pos}")
        c = int(coef) if coef else 1
        if sign == "-":
            c = -c
        i = j = 0
        for var, power in re.findall(r"([ab])(?:\^(\d+))?", factors):
            k = int(power) if power else 1
            if var == "a":
                i += k
            else:
                j += k
        terms.append((c, i, j))
        pos = m.end()
    return tuple(terms)


def format_terms(terms: Sequence[Term]) -> str:
    parts = []
    for c, i, j in terms:
        mono = "".join(
            f"{v}^{k}" if k > 1 else v for v, k in (("a", i), ("b", j)) if k
        )
        mag = abs(c)
        body = (str(mag) if mag != 1 or not mono else "") + mono
        parts.append(("-" if c < 0 else "+") + body)
    out = "".join(parts)
    return out[1:] if out.startswith("+") else out


def eval_task(spec: TaskSpec, a, b):
    """Exact canonical residue in ``[0, p)``; works on ints or integer arrays."""
    p = spec.modulus
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        total = sum(c * pow(int(a), i, p) * pow(int(b), j, p) for c, i, j in spec.terms)
        return total % p
    a = np.asarray(a, dtype=np.int64) % p
    b = np.asarray(b, dtype=np.int64) % p
    total = np.zeros(np.broadcast(a, b).shape, dtype=np.int64)
    for c, i, j in spec.terms:
        total += (c % p) * _powmod(a, i, p) * _powmod(b, j, p) % p
    return total % p


def _powmod(x: np.ndarray, k: int, p: int) -> np.ndarray:
    out = np.ones_like(x)
    for _ in range(k):
        out = out * x % p
    return out


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """Rows of (a, b) pairs with their answers, plus the recipe that made them.

    ``recipe`` is enough to regenerate the rows bit-exactly (see
    :func:`regenerate`).
    """

    spec: TaskSpec
    pairs: np.ndarray  # (n, 2) int64
    split: str
    seed: int
    recipe: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return self.pairs.shape[0]

    @property
    def answers(self) -> np.ndarray:
        return eval_task(self.spec, self.pairs[:, 0], self.pairs[:, 1]).astype(np.int64)

    @property
    def tokens(self) -> np.ndarray:
        n = len(self)
        tok = np.empty((n, 4), dtype=np.int64)
        tok[:, :2] = self.pairs
        tok[:, 2] = self.spec.sep_id
        tok[:, 3] = self.answers
        return tok

    def pair_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.pairs}

    def with_spec(self, spec: TaskSpec, split: str | None = None) -> "Dataset":
        """Same pairs labelled under another task."""
        recipe = dict(self.recipe, spec=spec.to_dict())
        return Dataset(spec, self.pairs.copy(), split or self.split, self.seed, recipe)


def concat(first: Dataset, *rest: Dataset, split: str | None = None) -> Dataset:
    parts = (first,) + rest
    pairs = np.concatenate([d.pairs for d in parts], axis=0)
    recipe = {"kind": "concat", "parts": [d.recipe for d in parts],
              "split": split or first.split}
    return Dataset(first.spec, pairs, split or first.split, first.seed, recipe)


def encode(a: int, b: int, answer: int, input_max: int) -> list[int]:
    if not (0 <= a < input_max and 0 <= b < input_max and 0 <= answer < input_max):
        raise ValueError("values out of token range")
    return [a, b, input_max, answer]


def decode(tokens: Sequence[int], input_max: int) -> tuple[int, int, int]:
    a, b, sep, ans = (int(t) for t in tokens)
    if sep != input_max or not all(0 <= v < input_max for v in (a, b, ans)):
        raise ValueError(f"not a valid row: {list(tokens)}")
    return a, b, ans


def _pair_codes(pairs: np.ndarray, input_max: int) -> np.ndarray:
    return pairs[:, 0] * input_max + pairs[:, 1]


def _sample_pairs(input_max: int, n: int, rng: np.random.Generator,
                  exclusion: Optional[np.ndarray]) -> np.ndarray:
    total = input_max * input_max
    if exclusion is not None and len(exclusion):
        banned = np.unique(_pair_codes(exclusion, input_max))
        pool = np.setdiff1d(np.arange(total, dtype=np.int64), banned, assume_unique=True)
    else:
        pool = np.arange(total, dtype=np.int64)
    if n > pool.size:
        raise ValueError(f"requested {n} pairs but only {pool.size} are available")
    codes = rng.choice(pool, size=n, replace=False) if n else np.empty(0, np.int64)
    return np.stack([codes // input_max, codes % input_max], axis=1)


def _exclusion_array(exclusion) -> Optional[np.ndarray]:
    if exclusion is None:
        return None
    if isinstance(exclusion, Dataset):
        return exclusion.pairs
    if isinstance(exclusion, np.ndarray):
        return exclusion.reshape(-1, 2)
    if isinstance(exclusion, (list, tuple)) and exclusion and isinstance(exclusion[0], Dataset):
        return np.concatenate([d.pairs for d in exclusion], axis=0)
    arr = np.array(sorted(exclusion), dtype=np.int64)
    return arr.reshape(-1, 2)


def _exclusion_recipes(exclusion) -> list:
    if isinstance(exclusion, Dataset):
        return [exclusion.recipe]
    if isinstance(exclusion, (list, tuple)) and exclusion and isinstance(exclusion[0], Dataset):
        return [d.recipe for d in exclusion]
    return []


def gen_train(spec: TaskSpec, size: float | int, seed: int, coverage: bool = True,
              split: str = "train", exclusion=None) -> Dataset:
    """Uniform sample of distinct pairs.

    A float ``size`` is a fraction of all ``input_max**2`` pairs, an int a row
    count.  With ``coverage`` every number token appears in some row: missing
    tokens ``i`` are repaired by appending the diagonal row ``(i, i)``.
    """
    total = spec.input_max ** 2
    if isinstance(size, float):
        if not 0.0 <= size <= 1.0:
            raise ValueError(f"fraction {size} outside [0, 1]")
        n = int(round(size * total))
    else:
        n = int(size)
    if n < 0 or n > total:
        raise ValueError(f"cannot draw {n} distinct pairs from {total}")
    rng = seeded_rng(seed)
    pairs = _sample_pairs(spec.input_max, n, rng, _exclusion_array(exclusion))
    if coverage:
        present = np.zeros(spec.input_max, dtype=bool)
        present[pairs.reshape(-1)] = True
        missing = np.flatnonzero(~present)
        if missing.size:
            pairs = np.concatenate([pairs, np.stack([missing, missing], axis=1)])
    recipe = {"kind": "train", "spec": spec.to_dict(), "size": size, "seed": seed,
              "coverage": coverage, "split": split,
              "exclude": _exclusion_recipes(exclusion)}
    return Dataset(spec, pairs, split, seed, recipe)


def gen_ambiguous_core(spec: TaskSpec, split: str = "train") -> Dataset:
    """One diagonal row ``(i, i)`` per number token."""
    i = np.arange(spec.input_max, dtype=np.int64)
    recipe = {"kind": "core", "spec": spec.to_dict(), "split": split}
    return Dataset(spec, np.stack([i, i], axis=1), split, 0, recipe)


def gen_disambiguation(spec: TaskSpec, n: int, seed: int, exclusion=None,
                       split: str = "train") -> Dataset:
    """``n`` uniform distinct pairs outside ``exclusion``; diagonal pairs allowed."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = seeded_rng(seed)
    pairs = _sample_pairs(spec.input_max, n, rng, _exclusion_array(exclusion))
    recipe = {"kind": "disambiguation", "spec": spec.to_dict(), "n": n, "seed": seed,
              "split": split, "exclude": _exclusion_recipes(exclusion)}
    return Dataset(spec, pairs, split, seed, recipe)


def regenerate(recipe: Mapping) -> Dataset:
    kind = recipe["kind"]
    if kind == "concat":
        parts = [regenerate(r) for r in recipe["parts"]]
        return concat(*parts, split=recipe["split"])
    spec = TaskSpec.from_dict(recipe["spec"])
    excl = [regenerate(r) for r in recipe.get("exclude", [])] or None
    if kind == "core":
        return gen_ambiguous_core(spec, recipe["split"])
    if kind == "train":
        return gen_train(spec, recipe["size"], recipe["seed"], recipe["coverage"],
                         recipe["split"], excl)
    if kind == "disambiguation":
        return gen_disambiguation(spec, recipe["n"], recipe["seed"], excl, recipe["split"])
    raise ValueError(f"unknown dataset recipe kind {kind!r}")


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Header line ``# {json}`` then one ``a,b,sep,answer`` row per line."""
    header = {"spec": ds.spec.to_dict(), "terms": [list(t) for t in ds.spec.terms],
              "modulus": ds.spec.modulus, "input_max": ds.spec.input_max,
              "split": ds.split, "seed": ds.seed, "recipe": ds.recipe}
    lines = ["# " + json.dumps(header, sort_keys=True)]
    lines += [",".join(str(int(v)) for v in row) for row in ds.tokens]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path, verify: bool = True) -> Dataset:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# "):
        raise ValueError(f"{path}: missing dataset header")
    header = json.loads(text[0][2:])
    spec = TaskSpec(tuple(tuple(t) for t in header["terms"]), header["modulus"],
                    header["input_max"])
    rows = np.array([[int(x) for x in line.split(",")] for line in text[1:] if line],
                    dtype=np.int64).reshape(-1, 4)
    for row in rows:
        decode(row, spec.input_max)
    ds = Dataset(spec, rows[:, :2], header["split"], header["seed"], header.get("recipe", {}))
    if not np.array_equal(ds.tokens, rows):
        raise ValueError(f"{path}: stored answers disagree with the task")
    if verify and ds.recipe:
        again = regenerate(ds.recipe)
        if not np.array_equal(again.tokens, rows):
            raise ValueError(f"{path}: rows do not match regeneration from header")
    return ds


# tasks used throughout the arithmetic experiments
def standard_tasks(modulus: int = 7, input_max: int = 100) -> dict[str, TaskSpec]:
    exprs = {
        "T1": "a+ab", "T2": "a^2+ab",
        "S1": "ab", "S2": "a", "S3": "a^2",
        "a+ab": "a+ab", "a^2+b^2": "a^2+b^2", "a^2+ab": "a^2+ab",
        "a^2+ab+b^2": "a^2+ab+b^2", "a^3+ab": "a^3+ab", "a^2-b^2": "a^2-b^2",
        "a+b": "a+b",
    }
    return {k: TaskSpec.parse(v, modulus, input_max) for k, v in exprs.items()}
