"""Command-line entry point: ``istr <subcommand> --config <path> --out <dir>``."""

import argparse
import dataclasses
import json
import logging
import sys
from typing import List, Optional

from istr.errors import IstrError
from istr.log import configure_logging
from istr.pipeline.config import load_config
from istr.pipeline.runner import RUN_ORDER, open_run, pipeline_run, run_stage
from istr.pipeline.stages import StageContext
from istr.pipeline.state import new_state

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "poison": "poison the training set and export the original triggers",
    "train": "train the suspect model and the clean reference model",
    "detect": "Steps scan of the defender's clean set and suspect screening",
    "dms": "differential middle-slice masks for the screened classes",
    "invert": "mask-constrained Steps inversion of the flagged pairs",
    "repair": "unlearn the reverse triggers and verify the repaired model",
    "eval": "print the pre/post attack success table",
    "report": "rebuild the metric bundle from stored artifacts",
    "run": "every stage in order, skipping stages that are already done",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="istr",
        description="Backdoor lab: poison, detect, refine, invert and unlearn.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  istr run --config configs/badnets-mnist-desk.yaml --out runs/badnets
  istr detect --config configs/badnets-mnist-desk.yaml --out runs/badnets --verbose
  istr run --config configs/natural-mnist-desk.yaml --out runs/natural --seed 7 --full-dms
  istr detect --config configs/badnets-mnist-desk.yaml --out runs/scan --model suspect.istr --baseline
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="Path to the run config (YAML or JSON)")
        p.add_argument("--out", help="Run directory (overrides 'out' in the config)")
        p.add_argument("--seed", type=int, help="Override the config seed")
        p.add_argument("--full-dms", action="store_true", help="Run the DMS-constrained scan on every class")
        p.add_argument("--model", help="Scan this checkpoint instead of the run's own suspect model")
        p.add_argument("--baseline", action="store_true",
                       help="Also time the L1 class-traversal inversion during detect")
        p.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def _error_payload(error: IstrError) -> str:
    return json.dumps({
        "error": type(error).__name__,
        "message": str(error),
        "stage": getattr(error, "stage", None),
    }, sort_keys=True)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging("DEBUG" if args.verbose else None)
    try:
        config = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.full_dms:
            overrides["full_dms"] = True
        if args.baseline:
            overrides["steps"] = dataclasses.replace(config.steps, baseline=True)
        if overrides:
            config = dataclasses.replace(config, **overrides)

        if args.command == "run":
            state = pipeline_run(config, args.out, RUN_ORDER, model_path=args.model)
            logger.info("ran %s; skipped %s", state["stages"] or "nothing", state["skipped"] or "nothing")
        else:
            run = open_run(config, args.out)
            ctx = StageContext(config, run, model_path=args.model)
            try:
                run_stage(args.command, ctx, new_state())
            finally:
                if ctx.timer.rows:
                    ctx.timer.save(run.report("timing", ".csv"))
    except IstrError as e:
        logger.debug("command failed", exc_info=True)
        print(_error_payload(e), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
