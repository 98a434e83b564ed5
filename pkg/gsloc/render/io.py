"""Image files: 8-bit PNG renders and GSFM feature images.

GSFM layout: b"GSFM", little-endian u32 H, W, D, then H*W*D float32 in
row-major (H, W, D) order.
"""

import os
import struct
from glob import glob

import cv2
import numpy as np
from natsort import natsorted

from gsloc.core import SchemaError

FEATURE_MAGIC = b"GSFM"
FEATURE_EXT = ".gsfm"


def write_feature_image(image: np.ndarray, path: str) -> None:
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"Expected (H, W, D) feature image, got shape {image.shape}")
    height, width, dim = image.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", height, width, dim))
        f.write(np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_feature_image(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise SchemaError(f"{path}: truncated header")
    if raw[:4] != FEATURE_MAGIC:
        raise SchemaError(f"{path}: bad magic {raw[:4]!r}, expected {FEATURE_MAGIC!r}")
    height, width, dim = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * height * width * dim
    if len(raw) != expected:
        raise SchemaError(f"{path}: {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=16)
    return data.reshape(height, width, dim).astype(np.float64)


def feature_path(directory: str, view_id: int) -> str:
    return os.path.join(directory, f"{view_id:04d}{FEATURE_EXT}")


def write_feature_dir(images: dict[int, np.ndarray], directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for view_id, image in images.items():
        write_feature_image(image, feature_path(directory, view_id))


def read_feature_dir(directory: str) -> dict[int, np.ndarray]:
    """All `<view_id>.gsfm` files of a directory, keyed by view id."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(directory)
    images = {}
    for path in natsorted(glob(os.path.join(directory, f"*{FEATURE_EXT}"))):
        stem = os.path.basename(path).removesuffix(FEATURE_EXT)
        if not stem.isnumeric():
            raise SchemaError(f"{path}: feature files must be named <view_id>{FEATURE_EXT}")
        images[int(stem)] = read_feature_image(path)
    return images


def write_png(image: np.ndarray, path: str) -> None:
    """RGB float image in [0, 1] -> 8-bit PNG."""
    rgb = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(path, cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)):
        raise OSError(f"Could not write {path}")
