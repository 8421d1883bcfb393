"""
Main application file for the lowres-tts toolkit.
This module provides the command-line entry point.
"""

import sys

from lowres_tts.cli import dispatch


def main():
    """Entry point for the application."""
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
