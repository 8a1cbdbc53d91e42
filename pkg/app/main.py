"""Command-line entry point: argument parsing and exception -> exit code handling."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Type

from app import __version__
from app.cli import cmd_compress, cmd_diagnose, cmd_report, cmd_sweep, cmd_train
from app.models import SweepScope
from app.services.exceptions import (
    CheckpointMismatchError,
    ConfigError,
    ConsistencyError,
    PlanError,
    PruneLabException,
    TrainingError,
)

logger = logging.getLogger(__name__)

ExceptionHandler = Callable[[Exception], int]

# Lookup walks the exception MRO, so subclasses win over their bases.
_exception_handlers: Dict[Type[Exception], ExceptionHandler] = {}


def exception_handler(exc_type: Type[Exception]):
    """Register the exit-code handler of one exception type."""
    def decorator(func: ExceptionHandler) -> ExceptionHandler:
        _exception_handlers[exc_type] = func
        return func
    return decorator


def _fail(exc: Exception, exit_code: int, error_code: str) -> int:
    print(f"prune-lab: error [{error_code}]: {exc}", file=sys.stderr)
    return exit_code


@exception_handler(ConfigError)
def config_error_handler(exc: ConfigError) -> int:
    """Handle ConfigError with exit code 2."""
    return _fail(exc, 2, "CONFIG_ERROR")


@exception_handler(TrainingError)
def training_error_handler(exc: TrainingError) -> int:
    """Handle TrainingError with exit code 3."""
    return _fail(exc, 3, "TRAINING_DIVERGED")


@exception_handler(CheckpointMismatchError)
def checkpoint_mismatch_handler(exc: CheckpointMismatchError) -> int:
    """Handle CheckpointMismatchError with exit code 4."""
    return _fail(exc, 4, "CHECKPOINT_MISMATCH")


@exception_handler(PlanError)
def plan_error_handler(exc: PlanError) -> int:
    """Handle PlanError (overlaps included) with exit code 5."""
    return _fail(exc, 5, "INVALID_PLAN")


@exception_handler(ConsistencyError)
def consistency_error_handler(exc: ConsistencyError) -> int:
    """Handle ConsistencyError with exit code 6."""
    return _fail(exc, 6, "INCONSISTENT_ARTIFACTS")


@exception_handler(PruneLabException)
def prune_lab_error_handler(exc: PruneLabException) -> int:
    """Any other prune-lab failure exits with 1."""
    return _fail(exc, 1, "FAILED")


def handle_exception(exc: Exception) -> Optional[int]:
    for klass in type(exc).__mro__:
        handler = _exception_handlers.get(klass)
        if handler is not None:
            return handler(exc)
    return None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prune-lab",
        description="Train, diagnose, sweep and compress a toy encoder-decoder with magnitude pruning.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", type=Path, required=True, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=None, help="Output directory (overrides the config)")
        return p

    with_config(sub.add_parser("train", help="Train the toy model and write a checkpoint"))

    diagnose = with_config(sub.add_parser("diagnose", help="Gradient and Fisher sensitivity per module"))
    diagnose.add_argument("--checkpoint", type=Path, default=None)

    sweep = with_config(sub.add_parser("sweep", help="Magnitude-pruning sweep of one scope"))
    sweep.add_argument("--checkpoint", type=Path, default=None)
    sweep.add_argument("--scope", choices=[s.value for s in SweepScope], required=True)
    sweep.add_argument("--jobs", type=_positive_int, default=None, help="Worker threads (default: config jobs)")

    compress = with_config(sub.add_parser("compress", help="Apply a prune plan and measure the result"))
    compress.add_argument("--checkpoint", type=Path, default=None)
    source = compress.add_mutually_exclusive_group()
    source.add_argument("--plan", type=Path, default=None, help="Plan JSON file")
    source.add_argument("--recipe", action="store_true", help="Built-in per-component recipe")
    source.add_argument("--target", type=float, default=None,
                        help="Allocate a plan reaching this sparsity from sweep_components.json")
    compress.add_argument("--epsilon", type=float, default=float("inf"),
                          help="Largest admissible per-component delta WER (pp) for --target")

    report = sub.add_parser("report", help="Merge an output directory into report.json and REPORT.md")
    report.add_argument("--out", type=Path, required=True)
    return parser


def run(args: argparse.Namespace) -> None:
    if args.command == "train":
        cmd_train(args.config, args.out)
    elif args.command == "diagnose":
        cmd_diagnose(args.config, args.checkpoint, args.out)
    elif args.command == "sweep":
        cmd_sweep(args.config, SweepScope(args.scope), args.checkpoint, args.out, args.jobs)
    elif args.command == "compress":
        cmd_compress(
            args.config,
            checkpoint=args.checkpoint,
            plan_path=args.plan,
            recipe=args.recipe,
            out=args.out,
            target=args.target,
            epsilon=args.epsilon,
        )
    elif args.command == "report":
        cmd_report(args.out)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run one command and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        run(args)
    except PruneLabException as exc:
        logger.debug("Command failed", exc_info=True)
        code = handle_exception(exc)
        return 1 if code is None else code
    return 0


if __name__ == "__main__":
    sys.exit(main())
