"""``subtask-induction`` command line.

Every subcommand reads one JSON config (``--config``, defaults when omitted),
applies ``--set key.path=value`` overrides and writes only below the output
directory.  Exit codes: 0 success, 1 usage or config error, 2 a trial,
check or report failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import config as config_mod
from .config import ConfigError, ExperimentConfig
from .transfer import MODES

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2

SEED_TARGETS = {
    "train-base": "seeds.base",
    "discover": "seeds.discovery",
    "gen-data": "seeds.data",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--output", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int,
                        help="seed of the stage this command runs (trial seed for run/transfer)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="subtask-induction", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train-base", parents=[common], help="stage 1: train the base model")
    sub.add_parser("discover", parents=[common], help="stage 2: find the subtask subnetwork")
    t = sub.add_parser("transfer", parents=[common], help="stage 3: one transfer trial")
    t.add_argument("--mode", required=True, choices=MODES)
    t.add_argument("--n", type=int, required=True, help="number of disambiguation samples")
    r = sub.add_parser("run", parents=[common], help="all stages, full sweep and report")
    r.add_argument("--parallelism", type=int, help="concurrent trials (default from config)")
    g = sub.add_parser("gen-data", parents=[common], help="write every dataset split as CSV")
    g.add_argument("--n", type=int, default=None,
                   help="also write a target training set with this many disambiguation rows")
    sub.add_parser("stats", parents=[common], help="per-layer density of the discovered mask")
    rep = sub.add_parser("report", parents=[common], help="summary CSV, SVG and table")
    rep.add_argument("records", nargs="?", type=Path,
                     help="records.jsonl (default: <output>/records.jsonl)")
    sub.add_parser("verify", parents=[common], help="run the property checks")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = list(args.overrides)
    if args.output is not None:
        overrides.append(f"output_dir={json.dumps(str(args.output))}")
    if args.seed is not None:
        target = SEED_TARGETS.get(args.command)
        if target:
            overrides.append(f"{target}={args.seed}")
        elif args.command == "run":
            overrides.append(f"seeds.trials=[{args.seed}]")
    return cfg.with_overrides(overrides) if overrides else cfg


def _print_seeds(cfg: ExperimentConfig) -> None:
    s = cfg.raw["seeds"]
    print(f"seeds: base={s['base']} data={s['data']} discovery={s['discovery']} "
          f"trials={s['trials']}")


def cmd_train_base(cfg, args) -> int:
    from .harness import base_path, train_base
    _, meta = train_base(cfg, on_epoch=_epoch_printer(args))
    print(f"base model {cfg.task('base').expr}: best epoch {meta['best_epoch']}, "
          f"eval acc {meta['eval_acc']:.4f}, test acc {meta['test_acc']:.4f}")
    print(f"checkpoint: {base_path(cfg)}")
    return EXIT_OK


def cmd_discover(cfg, args) -> int:
    from .harness import discover_subnet, mask_path, train_base
    params, _ = train_base(cfg)
    mask, meta = discover_subnet(cfg, params, on_epoch=_epoch_printer(args))
    print(f"subnetwork for {cfg.task('subtask').expr}: lambda {meta['lambda']:g}, "
          f"epoch {meta['epoch']}, eval acc {meta['eval_acc']:.4f}, "
          f"test acc {meta['test_acc']:.4f}, density {100 * mask.density:.2f}%")
    for c in meta.get("candidates", []):
        print(f"  lambda {c['lambda']:g}: eval acc {c['eval_acc']:.4f}, "
              f"density {100 * c['density']:.2f}%")
    print(f"mask: {mask_path(cfg)}")
    return EXIT_OK


def cmd_transfer(cfg, args) -> int:
    from .harness import (RECORDS_FILE, append_record, discover_subnet, run_trial,
                          train_base, trial_config)
    from .storage import mask_hash
    from .transfer import MASKED_MODES
    seed = 0 if args.seed is None else args.seed
    params, _ = train_base(cfg)
    mask = None
    if args.mode in MASKED_MODES:
        mask, _ = discover_subnet(cfg, params)
    tconf = trial_config(cfg, args.mode, args.n, seed, mask_hash(mask) if mask else None)
    print(f"trial seeds: reinit={tconf['reinit_seed']} order={tconf['order_seed']}")
    rec = run_trial(cfg, tconf, params, mask)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    append_record(cfg.output_dir / RECORDS_FILE, rec)
    acc = "-" if rec.test_acc is None else f"{rec.test_acc:.4f}"
    print(f"{rec.mode} n={rec.n_disambig} seed={rec.seed}: {rec.status}, test acc {acc}, "
          f"best epoch {rec.best_epoch}")
    if rec.status != "ok":
        print(f"error: {rec.error}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_run(cfg, args) -> int:
    from .harness import run_pipeline
    from .report import write_report
    records = run_pipeline(cfg, args.parallelism, progress=print)
    bad = [r for r in records if r.status != "ok"]
    if any(r.status == "ok" for r in records):
        out = write_report(records, cfg.output_dir)
        print(out["table"])
        print(f"wrote {out['csv']} and {out['svg']}")
    if bad:
        print(f"{len(bad)} of {len(records)} trials did not finish ok", file=sys.stderr)
        for r in bad[:10]:
            print(f"  {r.mode} n={r.n_disambig} seed={r.seed}: {r.status}: {r.error}",
                  file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_gen_data(cfg, args) -> int:
    from .harness import base_datasets, discovery_datasets, target_heldout, target_train
    from .tasks import save_dataset
    out = cfg.output_dir / "data"
    out.mkdir(parents=True, exist_ok=True)
    sets = dict(zip(("base-train", "base-eval", "base-test"), base_datasets(cfg)))
    sets.update(zip(("subtask-train", "subtask-eval", "subtask-test"), discovery_datasets(cfg)))
    sets.update(zip(("target-core", "target-eval", "target-test"), target_heldout(cfg)))
    if args.n is not None:
        sets[f"target-train-n{args.n}"] = target_train(cfg, args.n, 0)
    for name, ds in sets.items():
        path = out / f"{name}.csv"
        save_dataset(ds, path)
        print(f"{name:>18}: {len(ds):6d} rows ({ds.spec.expr}) -> {path}")
    return EXIT_OK


def cmd_stats(cfg, args) -> int:
    from .harness import discover_subnet, mask_path, train_base
    from .sparsify import subnet_stats
    if not mask_path(cfg).exists():
        print("no discovered mask for this config yet; running discovery", file=sys.stderr)
    params, _ = train_base(cfg)
    mask, _ = discover_subnet(cfg, params)
    stats = subnet_stats(mask, params)
    print(f"{'layer':<8}{'kept':>10}{'total':>10}{'density':>10}")
    for layer, s in stats["layers"].items():
        print(f"{layer:<8}{s['kept']:>10}{s['total']:>10}{100 * s['fraction']:>9.2f}%")
    print(f"{'all':<8}{stats['kept']:>10}{stats['total']:>10}{100 * stats['density']:>9.2f}%")
    if args.verbose:
        for name, s in stats["groups"].items():
            print(f"  {name:<24}{s['kept']:>8}/{s['total']:<8}{100 * s['fraction']:6.2f}%")
    return EXIT_OK


def cmd_report(cfg, args) -> int:
    from .harness import RECORDS_FILE, read_records
    from .report import write_report
    path = args.records or cfg.output_dir / RECORDS_FILE
    records = read_records(path)
    try:
        out = write_report(records, Path(path).parent)
    except ValueError as e:
        print(f"report: {e} ({path})", file=sys.stderr)
        return EXIT_FAILED
    print(out["table"])
    print(f"wrote {out['csv']} and {out['svg']}")
    return EXIT_OK


def cmd_verify(cfg, args) -> int:
    from .verification import run_all
    return EXIT_OK if run_all() else EXIT_FAILED


def _epoch_printer(args):
    if not args.verbose:
        return None

    def show(row):
        print("  " + " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in row.items()))
    return show


COMMANDS = {
    "train-base": cmd_train_base, "discover": cmd_discover, "transfer": cmd_transfer,
    "run": cmd_run, "gen-data": cmd_gen_data, "stats": cmd_stats, "report": cmd_report,
    "verify": cmd_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as e:
        print(f"config error at {e.path}: {e}", file=sys.stderr)
        print(config_mod.__doc__, file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.command != "verify":
        _print_seeds(cfg)
    return COMMANDS[args.command](cfg, args)


if __name__ == "__main__":
    sys.exit(main())
