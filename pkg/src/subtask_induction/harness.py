"""Three-stage pipeline (base model, subnetwork discovery, transfer sweep).

Stages 1 and 2 are cached under ``<output_dir>/cache`` by content hash, and
every finished trial is appended as one JSON line to
``<output_dir>/records.jsonl``, so interrupted runs resume where they stopped.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import numerics as nx
from .config import ExperimentConfig, canonical_json, content_hash, mix_seed
from .model import answer_accuracy, build_model
from .sparsify import discover, subnet_stats
from .storage import (load_checkpoint, load_mask, mask_hash, save_checkpoint, save_mask)
from .tasks import Dataset, concat, gen_ambiguous_core, gen_disambiguation, gen_train
from .training import FrozenWeightError, train
from .transfer import TransferPlan, run_transfer

log = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"


@dataclass
class TrialRecord:
    config: dict
    config_hash: str
    mode: str
    n_disambig: int
    seed: int
    status: str = "ok"
    history: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    test_acc: Optional[float] = None
    subnet: Optional[dict] = None
    wall_clock: float = 0.0
    error: Optional[str] = None

    def to_json(self) -> str:
        return canonical_json(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(**d)

    def verify_hash(self) -> bool:
        return content_hash(self.config) == self.config_hash


# ---------------------------------------------------------------------------
# data for each stage


def base_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    d, seeds = cfg.raw["data"], cfg.raw["seeds"]
    spec = cfg.task("base")
    tr = gen_train(spec, float(d["base_train_fraction"]), mix_seed(seeds["data"], "base-train"),
                   d["coverage"])
    ev = gen_disambiguation(spec, d["eval_size"], mix_seed(seeds["data"], "base-eval"), tr,
                            split="eval")
    te = gen_disambiguation(spec, d["test_size"], mix_seed(seeds["data"], "base-test"),
                            [tr, ev], split="test")
    return tr, ev, te


def discovery_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    d, seeds = cfg.raw["data"], cfg.raw["seeds"]
    spec = cfg.task("subtask")
    ev = gen_disambiguation(spec, d["eval_size"], mix_seed(seeds["data"], "sub-eval"), split="eval")
    te = gen_disambiguation(spec, d["test_size"], mix_seed(seeds["data"], "sub-test"), ev,
                            split="test")
    avail = spec.input_max ** 2 - len(ev) - len(te)
    n = min(d["discovery_size"], avail)
    tr = gen_train(spec, n, mix_seed(seeds["data"], "sub-train"), False, exclusion=[ev, te])
    return tr, ev, te


def target_heldout(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    """Ambiguous core plus eval/test sets that avoid the diagonal."""
    d, seeds = cfg.raw["data"], cfg.raw["seeds"]
    spec = cfg.task("target")
    core = gen_ambiguous_core(spec)
    ev = gen_disambiguation(spec, d["eval_size"], mix_seed(seeds["data"], "target-eval"), core,
                            split="eval")
    te = gen_disambiguation(spec, d["test_size"], mix_seed(seeds["data"], "target-test"),
                            [core, ev], split="test")
    return core, ev, te


def target_train(cfg: ExperimentConfig, n: int, seed: int) -> Dataset:
    core, ev, te = target_heldout(cfg)
    extra = gen_disambiguation(cfg.task("target"), n,
                               mix_seed(cfg.raw["seeds"]["data"], "disambig", n, seed), [ev, te])
    return concat(core, extra)


# ---------------------------------------------------------------------------
# stage keys


def stage1_key(cfg: ExperimentConfig) -> str:
    r = cfg.raw
    return content_hash({"model": r["model"], "data": r["data"], "task": r["tasks"]["base"],
                         "train": r["base_train"], "seed": r["seeds"]["base"],
                         "data_seed": r["seeds"]["data"]})


def stage2_key(cfg: ExperimentConfig) -> str:
    r = cfg.raw
    return content_hash({"base": stage1_key(cfg), "task": r["tasks"]["subtask"],
                         "sparsify": r["sparsify"], "seed": r["seeds"]["discovery"],
                         "discovery_size": r["data"]["discovery_size"]})


def _cache(cfg: ExperimentConfig) -> Path:
    path = cfg.output_dir / "cache"
    path.mkdir(parents=True, exist_ok=True)
    return path


def base_path(cfg) -> Path:
    return _cache(cfg) / f"base-{stage1_key(cfg)}.ckpt"


def mask_path(cfg) -> Path:
    return _cache(cfg) / f"mask-{stage2_key(cfg)}.mask"


def train_base(cfg: ExperimentConfig, on_epoch=None) -> tuple[dict, dict]:
    """Stage 1, loading the cached checkpoint when present."""
    path = base_path(cfg)
    if path.exists():
        params, _, meta = load_checkpoint(path)
        return params, meta
    tr, ev, te = base_datasets(cfg)
    mcfg = cfg.model
    params = build_model(mcfg, cfg.raw["seeds"]["base"])
    t0 = time.time()
    res = train(params, mcfg, tr.tokens, ev.tokens, cfg.base_train,
                mix_seed(cfg.raw["seeds"]["base"], "base-order"), on_epoch=on_epoch)
    meta = {"stage": "base", "key": stage1_key(cfg), "task": cfg.task("base").expr,
            "best_epoch": res.best_epoch, "eval_acc": res.best_eval,
            "test_acc": answer_accuracy(res.params, te.tokens, mcfg),
            "history": res.history, "wall_clock": time.time() - t0,
            "n_train": len(tr)}
    save_checkpoint(path, res.params, mcfg, meta)
    return res.params, meta


def discover_subnet(cfg: ExperimentConfig, base_params: dict, on_epoch=None):
    """Stage 2, loading the cached mask when present."""
    path = mask_path(cfg)
    if path.exists():
        return load_mask(path)
    tr, ev, te = discovery_datasets(cfg)
    mcfg = cfg.model
    t0 = time.time()
    res = discover(base_params, mcfg, tr.tokens, ev.tokens, cfg.sparsify,
                   seed=mix_seed(cfg.raw["seeds"]["discovery"], "mask-order"), on_epoch=on_epoch)
    stats = subnet_stats(res.mask, base_params)
    meta = {"stage": "discovery", "key": stage2_key(cfg), "task": cfg.task("subtask").expr,
            "lambda": res.lam, "epoch": res.epoch, "eval_acc": res.eval_acc,
            "test_acc": answer_accuracy(base_params, te.tokens, mcfg, res.mask.override(base_params)),
            "density": res.density, "layers": stats["layers"], "candidates": res.candidates,
            "history": res.history, "wall_clock": time.time() - t0, "n_train": len(tr)}
    save_mask(path, res.mask, meta)
    return res.mask, meta


# ---------------------------------------------------------------------------
# stage 3


def trial_grid(cfg: ExperimentConfig) -> list[tuple[str, int, int]]:
    r = cfg.raw
    grid = [(m, n, s) for n in r["sweep"] for m in r["modes"] for s in r["seeds"]["trials"]]
    for extra in r["extra"]:
        for n in extra["sizes"]:
            for s in r["seeds"]["trials"]:
                item = (extra["mode"], n, s)
                if item not in grid:
                    grid.append(item)
    return grid


def trial_config(cfg: ExperimentConfig, mode: str, n: int, seed: int,
                 mask_id: str | None) -> dict:
    r = cfg.raw
    return {"stage1": stage1_key(cfg), "stage2": stage2_key(cfg), "mask": mask_id,
            "model": r["model"], "data": r["data"], "tasks": r["tasks"],
            "transfer": r["transfer"], "data_seed": r["seeds"]["data"],
            "mode": mode, "n_disambig": n, "seed": seed,
            "reinit_seed": mix_seed(seed, mode, n, "reinit"),
            "order_seed": mix_seed(seed, mode, n, "order")}


def run_trial(cfg: ExperimentConfig, tconf: dict, base_params, mask,
              check_every_epoch: bool = False) -> TrialRecord:
    mode, n, seed = tconf["mode"], tconf["n_disambig"], tconf["seed"]
    rec = TrialRecord(config=tconf, config_hash=content_hash(tconf), mode=mode,
                      n_disambig=n, seed=seed)
    t0 = time.time()
    try:
        core, ev, te = target_heldout(cfg)
        tr = target_train(cfg, n, seed)
        plan = TransferPlan(mode, reinit_seed=tconf["reinit_seed"], mask=mask,
                            source_id=tconf["stage1"], unmasked=cfg.unmasked)
        out = run_transfer(plan, base_params, cfg.model, tr.tokens, ev.tokens, te.tokens,
                           cfg.transfer_train, tconf["order_seed"], check_every_epoch)
        rec.history = out["history"]
        rec.best_epoch = out["best_epoch"]
        rec.test_acc = out["test_acc"]
        rec.subnet = out["subnet"]
    except nx.NonFiniteError as e:
        rec.status, rec.error = "diverged", str(e)
    except FrozenWeightError:
        raise
    except Exception as e:  # recorded, never aborts a sweep
        rec.status, rec.error = "failed", f"{type(e).__name__}: {e}"
        log.debug(traceback.format_exc())
    rec.wall_clock = time.time() - t0
    return rec


def append_record(path: Path, rec: TrialRecord) -> None:
    """One ``write`` on an O_APPEND descriptor, so lines never interleave or truncate."""
    line = (rec.to_json() + "\n").encode()
    fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    try:
        os.write(fd, line)
        os.fsync(fd)
    finally:
        os.close(fd)


def read_records(path) -> list[TrialRecord]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            out.append(TrialRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError):
            log.warning("skipping unreadable record line in %s", path)
    return out


# worker state for process pools
_WORKER: dict = {}


def _init_worker(raw: dict, base_file: str, mask_file: Optional[str]):
    cfg = ExperimentConfig(raw)
    params, _, _ = load_checkpoint(base_file)
    mask = load_mask(mask_file)[0] if mask_file else None
    _WORKER.update(cfg=cfg, params=params, mask=mask)


def _worker_run(tconf: dict) -> TrialRecord:
    return run_trial(_WORKER["cfg"], tconf, _WORKER["params"], _WORKER["mask"])


def sweep_runner(trials: Sequence[Callable[[], TrialRecord]] | Sequence[dict],
                 parallelism: int = 1, sink: Optional[Path] = None,
                 worker_args: Optional[tuple] = None) -> list[TrialRecord]:
    """Run independent trials, at most ``parallelism`` at a time.

    ``trials`` are either zero-argument callables (run in-process) or trial
    config dicts executed in a process pool set up from ``worker_args``.
    Results come back in input order; each is appended to ``sink`` as soon
    as it finishes.  A failing trial yields a failed record instead of
    aborting the sweep.
    """
    results: list[Optional[TrialRecord]] = [None] * len(trials)

    def finish(i, rec):
        results[i] = rec
        if sink is not None:
            append_record(sink, rec)

    if parallelism <= 1 or len(trials) <= 1:
        if worker_args is not None and trials and isinstance(trials[0], dict):
            _init_worker(*worker_args)
        for i, t in enumerate(trials):
            finish(i, t() if callable(t) else _worker_run(t))
        return results  # type: ignore[return-value]
    if worker_args is None:
        raise ValueError("parallel sweeps need worker_args to rebuild trial state")
    with ProcessPoolExecutor(max_workers=parallelism, initializer=_init_worker,
                             initargs=worker_args) as pool:
        futures = {pool.submit(_worker_run, t): i for i, t in enumerate(trials)}
        from concurrent.futures import as_completed
        for fut in as_completed(futures):
            finish(futures[fut], fut.result())
    return results  # type: ignore[return-value]


def run_pipeline(cfg: ExperimentConfig, parallelism: Optional[int] = None,
                 progress: Optional[Callable[[str], None]] = None) -> list[TrialRecord]:
    """Stages 1-3; finished trials already in the records file are reused."""
    say = progress or (lambda msg: log.info(msg))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    sink = out / RECORDS_FILE
    grid = trial_grid(cfg)
    failure = None
    base_params = mask = None
    try:
        base_params, meta = train_base(cfg)
        say(f"base model: test acc {meta.get('test_acc', float('nan')):.4f}")
        if any(m in ("induction", "induction-trainable", "random-subnet", "complement-subnet")
               for m, _, _ in grid) or not grid:
            mask, mmeta = discover_subnet(cfg, base_params)
            say(f"subnetwork: density {mmeta.get('density', mask.density):.4f}, "
                f"subtask test acc {mmeta.get('test_acc', float('nan')):.4f}")
    except Exception as e:
        failure = f"{type(e).__name__}: {e}"
        say(f"upstream stage failed: {failure}")

    existing = {r.config_hash: r for r in read_records(sink)}
    mask_id = mask_hash(mask) if mask is not None else None
    records: list[Optional[TrialRecord]] = []
    pending: list[tuple[int, dict]] = []
    for mode, n, seed in grid:
        tconf = trial_config(cfg, mode, n, seed, mask_id)
        h = content_hash(tconf)
        if h in existing:
            records.append(existing[h])
        elif failure is not None:
            rec = TrialRecord(config=tconf, config_hash=h, mode=mode, n_disambig=n, seed=seed,
                              status="failed", error=f"upstream: {failure}")
            append_record(sink, rec)
            records.append(rec)
        else:
            records.append(None)
            pending.append((len(records) - 1, tconf))
    if pending:
        say(f"running {len(pending)} trials ({len(grid) - len(pending)} cached)")
        par = cfg.raw["parallelism"] if parallelism is None else parallelism
        worker_args = (cfg.raw, str(base_path(cfg)), str(mask_path(cfg)) if mask is not None else None)
        if par <= 1:
            done = []
            for k, (_, tconf) in enumerate(pending):
                rec = run_trial(cfg, tconf, base_params, mask)
                append_record(sink, rec)
                done.append(rec)
                acc = "-" if rec.test_acc is None else f"{rec.test_acc:.3f}"
                say(f"[{k + 1}/{len(pending)}] {rec.mode} n={rec.n_disambig} seed={rec.seed}: "
                    f"{rec.status} test_acc={acc}")
        else:
            done = sweep_runner([t for _, t in pending], par, sink, worker_args)
        for (i, _), rec in zip(pending, done):
            records[i] = rec
    return records  # type: ignore[return-value]


def environment() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "platform": platform.platform()}
