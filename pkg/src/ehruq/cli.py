"""Command line driver.

    ehruq synth          --config exp.yaml [--seed N] [--out DIR]
    ehruq train          --config exp.yaml
    ehruq eval-whitebox  --config exp.yaml
    ehruq eval-blackbox  --config exp.yaml [--replay DIR]
    ehruq report         INPUT [INPUT ...] --out DIR [--predictions DIR] [--bins M]

Exit codes: 0 success, 1 unexpected failure, 2 configuration or input
error, 3 completed with degraded cells (missing checkpoints, failed
client calls). API keys are read from the environment variable named in
the client config and are never accepted as flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .config import ConfigError, load_config
from .experiment import (
    ReportSchemaError,
    RunResult,
    run_eval_blackbox,
    run_eval_whitebox,
    run_report,
    run_synth,
    run_train,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DEGRADED = 3

log = logging.getLogger("ehruq")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehruq", description="Uncertainty quantification for clinical predictions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name: str, help: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="YAML experiment config (defaults if omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="override the run directory")
        return sp

    with_config("synth", "generate a synthetic cohort, embeddings and concept dictionary")
    with_config("train", "train every decoder of the white-box grid")
    with_config("eval-whitebox", "calibration table for the white-box grid")
    bb = with_config("eval-blackbox", "sample, archive and score the black-box grid")
    bb.add_argument("--replay", help="re-score archives from an earlier run; no client calls")

    rp = sub.add_parser("report", help="merge tables into a summary with best-cell flags")
    rp.add_argument("inputs", nargs="+", help="table JSON files or directories containing one")
    rp.add_argument("--out", required=True, help="output directory")
    rp.add_argument("--predictions", help="prediction JSONL directory for reliability exports")
    rp.add_argument("--bins", type=int, default=10, help="reliability bins (default 10)")
    return p


def _dispatch(args: argparse.Namespace) -> RunResult:
    if args.command == "report":
        if args.bins < 1:
            raise ConfigError("--bins must be >= 1")
        return run_report(args.inputs, args.out, args.predictions, args.bins)
    cfg = load_config(args.config, {"seed": args.seed, "out": args.out})
    if args.command == "synth":
        return run_synth(cfg)
    if args.command == "train":
        return run_train(cfg)
    if args.command == "eval-whitebox":
        return run_eval_whitebox(cfg)
    return run_eval_blackbox(cfg, replay=args.replay)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        result = _dispatch(args)
    except (ConfigError, ReportSchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for name, path in result.outputs.items():
        print(f"{name}\t{path}")
    if result.degraded:
        for msg in result.degraded[:20]:
            print(f"degraded: {msg}", file=sys.stderr)
        if len(result.degraded) > 20:
            print(f"degraded: ... {len(result.degraded) - 20} more", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
