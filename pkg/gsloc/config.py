"""Parse default and user config files"""

import configparser
import os
from collections.abc import Mapping
from typing import Any

PATH = os.path.dirname(__file__)
CONFIG_FILE = f"{PATH}/config"


def new_parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(inline_comment_prefixes=(";", "#"))


CONFIG = new_parser()
CONFIG.read(CONFIG_FILE)


def load_config(path: str | None = None) -> configparser.ConfigParser:
    """Return a fresh copy of the defaults, with `path` (if any) read on top.

    The module-level `CONFIG` is never mutated, so repeated CLI invocations in
    one process (tests) don't leak settings into each other.
    """
    config = new_parser()
    config.read_dict(CONFIG)
    if path:
        if not os.path.isfile(path):
            raise FileNotFoundError(path)
        config.read(path)
    return config


def apply_overrides(
    config: configparser.ConfigParser,
    section: str,
    overrides: Mapping[str, Any],
) -> configparser.ConfigParser:
    """Write explicitly given flag values (not None) into `section`."""
    if not config.has_section(section):
        config.add_section(section)
    for key, val in overrides.items():
        if val is None:
            continue
        if isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        config[section][key] = str(val)
    return config


def parse_floats(raw: str) -> list[float]:
    """'0.01, 0.05,0.1' -> [0.01, 0.05, 0.1]"""
    return [float(x) for x in raw.replace(" ", "").split(",") if x]
