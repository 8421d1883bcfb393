# Command-line package for the lowres-tts toolkit

from lowres_tts.cli.main import build_parser, dispatch

__all__ = ["build_parser", "dispatch"]
