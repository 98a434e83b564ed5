"""Reading and writing splat PLY files and camera files.

Camera files are INI, one section per camera:

    [camera 0]
    view_id = 0
    fx = 96.0
    fy = 96.0
    cx = 47.5
    cy = 47.5
    width = 96
    height = 96
    q_wc = [1.0, 0.0, 0.0, 0.0]
    t_wc = [0.0, 0.0, 6.0]

q_wc/t_wc map world to camera: X_cam = R(q_wc) @ X_world + t_wc.
"""

import configparser
import json
import os
from pathlib import Path

import numpy as np
import pandas as pd
from plyfile import PlyData
from plyfile import PlyElement
from plyfile import PlyParseError
from scipy.special import expit
from scipy.special import logit

from gsloc.core import LOGGER
from gsloc.core import DataError
from gsloc.core import SchemaError
from gsloc.scene.core import CameraView
from gsloc.scene.core import GaussianScene

# zeroth spherical harmonic basis constant
SH_C0 = 0.28209479177387814

MIN_SCALE = 1e-8

REQUIRED_PROPERTIES = [
    "x",
    "y",
    "z",
    "opacity",
    "scale_0",
    "scale_1",
    "scale_2",
    "rot_0",
    "rot_1",
    "rot_2",
    "rot_3",
    "f_dc_0",
    "f_dc_1",
    "f_dc_2",
]

CAMERA_KEYS = ["view_id", "fx", "fy", "cx", "cy", "width", "height", "q_wc", "t_wc"]


def parents_sidecar(path: str) -> Path:
    """scene.ply -> scene.parents.csv"""
    return Path(path).with_suffix(".parents.csv")


# splat ply {{{


def load_splat_ply(path: str) -> GaussianScene:
    """Decode a standard splat PLY (binary little endian).

    Higher SH bands (f_rest_*) and normals are ignored. Descriptor columns
    `feat_<i>` and a parent-id sidecar, as written by `save_splat_ply`, are
    picked up when present.
    """
    try:
        ply = PlyData.read(path)
    except PlyParseError as e:
        raise SchemaError(f"{path}: {e}") from e
    if ply.text or ply.byte_order != "<":
        raise SchemaError(f"{path}: expected binary_little_endian PLY")
    if "vertex" not in ply:
        raise SchemaError(f"{path}: no vertex element")

    vertex = ply["vertex"]
    names = [p.name for p in vertex.properties]
    for prop in REQUIRED_PROPERTIES:
        if prop not in names:
            raise SchemaError(f"{path}: missing vertex property '{prop}'")

    def cols(*props) -> np.ndarray:
        return np.stack([np.asarray(vertex[p], dtype=np.float64) for p in props], axis=1)

    means = cols("x", "y", "z")
    opacities = expit(np.asarray(vertex["opacity"], dtype=np.float64))
    scales = np.exp(cols("scale_0", "scale_1", "scale_2"))
    rotations = cols("rot_0", "rot_1", "rot_2", "rot_3")
    colors = 0.5 + SH_C0 * cols("f_dc_0", "f_dc_1", "f_dc_2")

    feat_names = sorted(
        (n for n in names if n.startswith("feat_")),
        key=lambda n: int(n.removeprefix("feat_")),
    )
    features = cols(*feat_names) if feat_names else np.zeros((len(means), 0))

    with np.errstate(invalid="ignore", divide="ignore"):
        rotations = rotations / np.linalg.norm(rotations, axis=1, keepdims=True)

    finite = np.ones(len(means), dtype=bool)
    for arr in [means, opacities[:, None], scales, rotations, colors, features]:
        finite &= np.isfinite(arr).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise DataError(f"{path}: non-finite decoded value at vertex {bad}")

    tiny = scales < MIN_SCALE
    if tiny.any():
        LOGGER.warning(
            "%s: clamped %d degenerate scale components to %g m",
            path,
            int(tiny.sum()),
            MIN_SCALE,
        )
        scales = np.maximum(scales, MIN_SCALE)

    # logistic(raw) can round to exactly 0 for very negative raw values
    opacities = np.maximum(opacities, np.finfo(np.float64).tiny)

    parent_ids = None
    sidecar = parents_sidecar(path)
    if sidecar.is_file():
        table = pd.read_csv(sidecar)
        if len(table) != len(means):
            raise DataError(f"{sidecar}: {len(table)} rows for {len(means)} vertices")
        parent_ids = table.parent_id.to_numpy()

    return GaussianScene(
        means=means,
        rotations=rotations,
        scales=scales,
        opacities=opacities,
        colors=colors,
        features=features,
        parent_ids=parent_ids,
    )


def save_splat_ply(scene: GaussianScene, path: str) -> None:
    """Inverse of `load_splat_ply`. Values are stored as float32."""
    n = len(scene)
    props = [(p, "f4") for p in ["x", "y", "z", "nx", "ny", "nz"]]
    props += [(f"f_dc_{i}", "f4") for i in range(3)]
    props += [("opacity", "f4")]
    props += [(f"scale_{i}", "f4") for i in range(3)]
    props += [(f"rot_{i}", "f4") for i in range(4)]
    props += [(f"feat_{i}", "f4") for i in range(scene.feature_dim)]

    data = np.zeros(n, dtype=props)
    for i, axis in enumerate("xyz"):
        data[axis] = scene.means[:, i]
    for i in range(3):
        data[f"f_dc_{i}"] = (scene.colors[:, i] - 0.5) / SH_C0
        data[f"scale_{i}"] = np.log(scene.scales[:, i])
    for i in range(4):
        data[f"rot_{i}"] = scene.rotations[:, i]
    for i in range(scene.feature_dim):
        data[f"feat_{i}"] = scene.features[:, i]
    # keep logit finite for opacity 1
    data["opacity"] = logit(np.clip(scene.opacities, 1e-7, 1 - 1e-7))

    PlyData(
        [PlyElement.describe(data, "vertex")],
        text=False,
        byte_order="<",
    ).write(path)

    sidecar = parents_sidecar(path)
    if (scene.parent_ids >= 0).any():
        pd.DataFrame({"parent_id": scene.parent_ids}).to_csv(
            sidecar,
            index_label="index",
        )
    elif sidecar.is_file():
        sidecar.unlink()


# }}}

# cameras {{{


def _camera_from_section(name: str, section: configparser.SectionProxy) -> CameraView:
    for key in CAMERA_KEYS:
        if key not in section:
            raise SchemaError(f"[{name}]: missing key '{key}'")
    try:
        quat = np.array(json.loads(section["q_wc"]), dtype=np.float64)
        trans = np.array(json.loads(section["t_wc"]), dtype=np.float64)
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise SchemaError(f"[{name}]: q_wc/t_wc must be JSON lists") from e
    if quat.shape != (4,) or trans.shape != (3,):
        raise SchemaError(f"[{name}]: q_wc needs 4 values and t_wc 3")

    norm = np.linalg.norm(quat)
    if not np.isfinite(norm) or norm == 0:
        raise DataError(f"[{name}]: quaternion {quat.tolist()} has zero norm")
    if abs(norm - 1) > 1e-9:
        LOGGER.warning("[%s]: normalized quaternion of norm %.9g", name, norm)
        quat = quat / norm

    return CameraView(
        view_id=section.getint("view_id"),
        fx=section.getfloat("fx"),
        fy=section.getfloat("fy"),
        cx=section.getfloat("cx"),
        cy=section.getfloat("cy"),
        width=section.getint("width"),
        height=section.getint("height"),
        rotation_wc=quat,
        translation_wc=trans,
    )


def load_cameras(path: str) -> list[CameraView]:
    """Read all cameras of an INI camera file, in file order."""
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise SchemaError(f"{path}: {e}") from e

    cameras = [_camera_from_section(name, parser[name]) for name in parser.sections()]

    seen = set()
    for cam in cameras:
        if cam.view_id in seen:
            raise DataError(f"{path}: duplicate view_id {cam.view_id}")
        seen.add(cam.view_id)
    return cameras


def save_cameras(cameras: list[CameraView], path: str) -> None:
    parser = configparser.ConfigParser()
    for cam in cameras:
        parser[f"camera {cam.view_id}"] = {
            "view_id": str(cam.view_id),
            "fx": repr(float(cam.fx)),
            "fy": repr(float(cam.fy)),
            "cx": repr(float(cam.cx)),
            "cy": repr(float(cam.cy)),
            "width": str(cam.width),
            "height": str(cam.height),
            "q_wc": json.dumps([float(x) for x in cam.rotation_wc]),
            "t_wc": json.dumps([float(x) for x in cam.translation_wc]),
        }
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)


# }}}
