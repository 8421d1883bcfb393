"""
Argument parsing and dispatch for the lowres-tts command line.
"""

import sys
import logging
import argparse

import torch

from lowres_tts.config import load_config_file, worker_count
from lowres_tts.errors import TTSError

from lowres_tts.cli.context import CommandContext
from lowres_tts.cli.data_commands import DataCommands
from lowres_tts.cli.eval_commands import EvalCommands
from lowres_tts.cli.model_commands import ModelCommands
from lowres_tts.cli.pipeline import PipelineCommand

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

COMMAND_GROUPS = (DataCommands, ModelCommands, EvalCommands, PipelineCommand)


def global_options():
    """Parent parser holding the flags every subcommand accepts."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, help="global random seed (default: train.seed, else 0)")
    parent.add_argument("--verbose", action="store_true", help="log progress at INFO level")
    parent.add_argument("--config", help="TOML config file with per-section overrides")
    return parent


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lowres-tts",
        description="Low-resource text-to-speech: corpus preparation, training, transfer and evaluation.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    parents = [global_options()]
    for group in COMMAND_GROUPS:
        group().register(subparsers, parents)
    return parser


def configure_logging(verbose):
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(logging.INFO if verbose else logging.WARNING)


def dispatch(argv=None, stdout=None):
    """Run one command line; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help and 2 for usage errors
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    configure_logging(args.verbose)
    try:
        torch.set_num_threads(worker_count())
        file_config = load_config_file(args.config) if args.config else {}
        ctx = CommandContext(file_config, seed=args.seed, stdout=stdout)
        args.handler(args, ctx)
    except TTSError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        print(f"E_INTERNAL: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK
