"""``iiloss`` command line.

Exit codes: 0 success, 1 validation failure (bad config, bad data, failed
gradient check), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .config import ConfigError, RunConfig, load_config
from .data import DatasetError, TensorFileError

VALIDATION_ERRORS = (ConfigError, DatasetError, TensorFileError)


def _ints(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iiloss", description="Inter-intra modal loss experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, seeds=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI config file (defaults used if omitted)")
        p.add_argument("--out", help="output directory")
        if seeds:
            p.add_argument("--seeds", type=_ints, help="comma-separated seeds, e.g. 1,2,3")
        return p

    add("gen-data", "write the synthetic dataset and manifest", seeds=False)
    add("train", "train and write metrics.csv plus a checkpoint")
    add("eval", "evaluate the checkpoint under --out on the test split", seeds=False)
    add("sweep-gamma", "intra-loss weight sweep").add_argument("--gamma2", type=_floats)
    add("sweep-batch", "batch size sweep, inter-only vs II").add_argument("--batches", type=_ints)
    add("noise-exp", "batch-composition noise experiment (category retrieval)")
    gc = sub.add_parser("grad-check", help="finite-difference gradient checks")
    gc.add_argument("--seed", type=int, default=0)
    return parser


def run(args) -> int:
    if args.command == "grad-check":
        return 0 if experiments.cmd_grad_check(args.seed) else 1

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.command == "gen-data":
        experiments.cmd_gen_data(cfg, args.out)
    elif args.command == "train":
        experiments.cmd_train(cfg, args.out, args.seeds)
    elif args.command == "eval":
        experiments.cmd_eval(cfg, args.out)
    elif args.command == "sweep-gamma":
        print(experiments.cmd_sweep_gamma(cfg, args.gamma2, args.seeds, args.out))
    elif args.command == "sweep-batch":
        print(experiments.cmd_sweep_batch(cfg, args.batches, args.seeds, args.out))
    elif args.command == "noise-exp":
        print(experiments.cmd_noise_exp(cfg, args.seeds, args.out))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
