"""GSLM map files.

Layout: b"GSLM", little-endian u32 version, u32 count, u32 D, then per point
3 float32 position followed by D float32 descriptor. Map meta lives in an INI
sidecar next to the map (`map.gslm` -> `map.meta.ini`).
"""

import configparser
import json
import struct
from dataclasses import asdict
from dataclasses import fields
from pathlib import Path

import numpy as np

from gsloc.core import LOGGER
from gsloc.core import SchemaError
from gsloc.mapper.core import LocalizationMap
from gsloc.mapper.core import MapMeta

MAP_MAGIC = b"GSLM"
MAP_VERSION = 1
HEADER = struct.Struct("<III")


def meta_sidecar(path: str) -> Path:
    return Path(path).with_suffix(".meta.ini")


def save_map(lmap: LocalizationMap, path: str) -> None:
    body = np.hstack([lmap.positions, lmap.descriptors]).astype("<f4")
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(HEADER.pack(MAP_VERSION, len(lmap), lmap.feature_dim))
        f.write(body.tobytes())

    parser = configparser.ConfigParser()
    parser["meta"] = {key: json.dumps(val) for key, val in asdict(lmap.meta).items()}
    with open(meta_sidecar(path), "w", encoding="utf-8") as f:
        parser.write(f)


def _load_meta(path: str) -> MapMeta:
    sidecar = meta_sidecar(path)
    if not sidecar.is_file():
        LOGGER.warning("%s: no meta sidecar, using defaults", path)
        return MapMeta()
    parser = configparser.ConfigParser()
    parser.read(sidecar, encoding="utf-8")
    if "meta" not in parser:
        raise SchemaError(f"{sidecar}: missing [meta] section")

    values = {}
    for f in fields(MapMeta):
        if f.name not in parser["meta"]:
            continue
        val = json.loads(parser["meta"][f.name])
        values[f.name] = tuple(val) if isinstance(val, list) else val
    return MapMeta(**values)


def load_map(path: str) -> LocalizationMap:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAP_MAGIC:
        raise SchemaError(f"{path}: bad magic {raw[:4]!r}, expected {MAP_MAGIC!r}")
    if len(raw) < 4 + HEADER.size:
        raise SchemaError(f"{path}: truncated header")
    version, count, dim = HEADER.unpack_from(raw, 4)
    if version != MAP_VERSION:
        raise SchemaError(f"{path}: unsupported map version {version}")
    offset = 4 + HEADER.size
    expected = offset + 4 * count * (3 + dim)
    if len(raw) != expected:
        raise SchemaError(f"{path}: {len(raw)} bytes, expected {expected}")

    body = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(count, 3 + dim)
    body = body.astype(np.float64)
    return LocalizationMap(body[:, :3], body[:, 3:], _load_meta(path))
