"""Command-line entry point: ``lps train | sweep | ablate | dump | generate``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from lps.data import ConfigError, DatasetParseError, SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from lps.model import load_checkpoint
from lps.train import (
    ExperimentConfig,
    dump_embeddings,
    load_config,
    parse_grid,
    read_metrics,
    run_ablation,
    run_experiment,
    run_sweep,
    set_option,
    write_table,
)

log = logging.getLogger("lps")


def _base_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg = set_option(cfg, key.strip(), value)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(data_seed=args.seed, init_seed=args.seed, batch_seed=args.seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _base_config(args)
    flags = {k: True for k in ("no_am", "no_pc", "no_uc", "no_entropy") if getattr(args, k)}
    if flags:
        cfg = cfg.replace(**flags)
    out = Path(args.out)

    def report(rec):
        log.info("epoch %d seen=%.4f novel=%.4f all=%.4f kl=%.5f",
                 rec.epoch, rec.seen_acc, rec.novel_acc, rec.all_acc, rec.kl_to_prior)

    run_experiment(cfg, out_dir=out, on_epoch=report)
    # the written file must re-parse into valid records
    read_metrics(out / "metrics.jsonl")
    return 0


def cmd_sweep(args) -> int:
    cfg = _base_config(args)
    rows = run_sweep(cfg, parse_grid(args.grid), jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(rows, out / "sweep.csv")
    write_table(rows, sys.stdout)
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def cmd_ablate(args) -> int:
    cfg = _base_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("--seeds needs at least one integer")
    rows = run_ablation(cfg, seeds, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(rows, out / "ablation.csv")
    write_table(rows, sys.stdout)
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def cmd_dump(args) -> int:
    params = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    text = dump_embeddings(params, ds, split=args.split)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_generate(args) -> int:
    cfg = _base_config(args)
    save_dataset(generate_synthetic(cfg.synthetic()), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lps", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--seed", type=int, help="set data, init and batching seeds")

    p = sub.add_parser("train", help="train one model")
    with_config(p)
    for flag in ("am", "pc", "uc", "entropy"):
        p.add_argument(f"--no-{flag}", dest=f"no_{flag}", action="store_true", help=f"ablate the {flag} term")
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid over C, tau, eta1, eta2, lambda_novel_ramp")
    with_config(p)
    p.add_argument("--grid", required=True, help='e.g. "C=1,5,10;tau=0.2,0.4"')
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs/sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="full objective and each single-term ablation per seed")
    with_config(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs/ablate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump", help="write per-sample logits from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset CSV (metadata next to it)")
    p.add_argument("--split", choices=("labeled", "unlabeled", "test"))
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("generate", help="write a synthetic dataset as CSV + metadata")
    with_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetParseError, ValueError, OSError) as exc:
        print(f"lps: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
