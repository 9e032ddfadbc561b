#!/usr/bin/env python3
"""
Main entry point for the CFPI toolkit.
Delegates to the command-line interface and exits with its status code.
"""
import sys

from src.cli import cli_main
from src.logger import LOGGER


def main() -> None:
    """Main application entry point."""
    code = cli_main(sys.argv[1:])
    LOGGER.debug(f"Exiting with status {code}")
    sys.exit(code)


if __name__ == "__main__":
    main()
