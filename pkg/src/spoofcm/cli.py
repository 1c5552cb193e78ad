"""Command-line entry points: train, evaluate, attack, gen-synth."""

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .data import gen_synthetic_corpus
from .runner import attack_run, evaluate_run, train_run


def _common(parser):
    parser.add_argument("--config", action="append", default=[],
                        help="config file (key=value); repeatable, later wins")
    parser.add_argument("--out", help="override run.out / output directory")
    parser.add_argument("--seed", type=int, help="override run.seeds with one seed")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spoofcm",
                                description="spoofing-countermeasure training stack")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train per the config (multi-seed aware)")
    _common(t)

    e = sub.add_parser("evaluate", help="score a protocol with a checkpoint")
    _common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--protocol", help="protocol file (default: configured eval protocol)")

    a = sub.add_parser("attack", help="PGD delta sweep against a checkpoint")
    _common(a)
    a.add_argument("--checkpoint", required=True)

    g = sub.add_parser("gen-synth", help="generate the synthetic corpus")
    _common(g)
    return p


def _config_from(args) -> "RunConfig":
    overrides = {}
    if args.seed is not None:
        overrides["run.seeds"] = str(args.seed)
    if args.out:
        overrides["run.out"] = args.out
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from(args)
        if args.command == "train":
            summaries = train_run(cfg)
            for s in summaries:
                dev = "n/a" if s["best_dev_eer"] is None else f"{s['best_dev_eer']:.4f}"
                print(f"seed {s['seed']}: best dev EER {dev} ({s['seconds']:.0f}s)")
        elif args.command == "evaluate":
            out_dir = args.out or cfg["run.out"]
            res = evaluate_run(cfg, args.checkpoint, args.protocol, out_dir)
            print(f"eer={res['eer']:.6f} min_tdcf={res['min_tdcf']:.6f}")
            for a, v in sorted(res["per_attack"].items()):
                print(f"eer_{a}={v:.6f}")
        elif args.command == "attack":
            out_dir = args.out or cfg["run.out"]
            rows = attack_run(cfg, args.checkpoint, out_dir)
            for r in rows:
                print(f"delta={r['delta']:g} accuracy={r['accuracy']:.4f} "
                      f"max_pert={r['max_perturbation']:.6g}")
        elif args.command == "gen-synth":
            out_dir = args.out or cfg["data.dir"]
            res = gen_synthetic_corpus(cfg.synth_config(), out_dir)
            for split in ("train", "dev", "eval"):
                print(f"{split}: {len(res[split]['entries'])} entries "
                      f"-> {res[split]['protocol']}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except RuntimeError as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
