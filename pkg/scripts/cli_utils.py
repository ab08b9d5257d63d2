from __future__ import annotations

import logging
import sys
from typing import Iterable

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_RUNTIME = 4

LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


def eprint(msg: str) -> None:
    print(msg, file=sys.stderr)


def eprint_errors(header: str, errors: Iterable[str]) -> None:
    eprint(f"Error: {header}")
    for err in errors:
        eprint(f"- {err}")


def configure_logging(verbose: bool = False) -> None:
    """Route library loggers to stderr; INFO with --verbose, WARNING otherwise."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )
