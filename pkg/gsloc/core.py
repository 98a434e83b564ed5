"""Logging helpers and the exception hierarchy shared by all modules."""

import logging
import sys
from pprint import pformat

LOGGER = logging.getLogger("gsloc")


def setup_logging(verbose: bool = False) -> None:
    """Library code never configures logging; the CLI calls this once."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        stream=sys.stdout,
    )


# https://docs.python.org/3/howto/logging.html
def lprint(*args) -> None:
    """Pretty print everything except strings"""
    for arg in args:
        if isinstance(arg, str):
            LOGGER.info(arg)
        else:
            LOGGER.info(pformat(arg))


def eprint(*args):
    """Print to stderr; typically for msgs that should be ignored by shell"""
    print(*args, file=sys.stderr)


class GslocError(Exception):
    """Base class of all errors raised on purpose by gsloc."""


class SchemaError(GslocError, ValueError):
    """A file is structurally wrong (missing property, key or magic)."""


class DataError(GslocError, ValueError):
    """A file or argument is well-formed but carries invalid values."""


class DomainError(GslocError, ValueError):
    """A parameter lies outside the domain where the maths is defined."""


class LocalizationError(GslocError, RuntimeError):
    """Pose estimation produced no usable model."""
