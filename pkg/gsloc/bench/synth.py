"""Synthetic feature-field scenes with ring cameras and ground-truth poses.

A scene directory holds:

    scene.ply          Gaussians with feat_* columns
    cameras.ini        training cameras
    queries.ini        query cameras (ground-truth poses)
    features/          one GSFM file per training view
    texture.ply        feature cells the images were rendered from, if any
    query_features/    one GSFM file per query, noise included
    spec.ini           the SceneSpec it was generated from
"""

import configparser
import os
from dataclasses import asdict
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from gsloc.config import CONFIG
from gsloc.core import LOGGER
from gsloc.core import DataError
from gsloc.render.io import read_feature_dir
from gsloc.render.io import write_feature_dir
from gsloc.render.rasterizer import project_scene
from gsloc.render.rasterizer import render_feature_image
from gsloc.scene.core import CameraView
from gsloc.scene.core import GaussianScene
from gsloc.scene.core import matrix_to_quat
from gsloc.scene.io import load_cameras
from gsloc.scene.io import load_splat_ply
from gsloc.scene.io import save_cameras
from gsloc.scene.io import save_splat_ply
from gsloc.split.splitter import BETA_MAX
from gsloc.split.splitter import split_scene

MAX_ATTEMPTS = 10
WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SceneSpec:
    gaussian_count: int = 50
    extent: float = 4.0
    anisotropy_range: tuple[float, float] = (3.0, 5.0)
    camera_count: int = 12
    ring_radius: float = 6.0
    image_size: tuple[int, int] = (160, 160)
    feature_dim: int = 64
    noise: float = 0.0
    seed: int = 0
    query_count: int = 20
    base_scale: float = 0.04
    opacity_range: tuple[float, float] = (0.7, 0.95)
    focal: float = 160.0
    ring_height: float = 1.0
    # 0 renders each Gaussian with a single descriptor
    texture_beta: float = 1.4
    texture_drift: float = 0.7

    def __post_init__(self):
        counts = {
            "gaussian_count": self.gaussian_count,
            "camera_count": self.camera_count,
            "query_count": self.query_count,
            "feature_dim": self.feature_dim,
            "height": self.image_size[0],
            "width": self.image_size[1],
        }
        for name, val in counts.items():
            if val <= 0:
                raise DataError(f"{name} must be positive, got {val}")
        lo, hi = self.anisotropy_range
        if lo < 1 or hi < lo:
            raise DataError(f"Invalid anisotropy range {self.anisotropy_range}")
        lo, hi = self.opacity_range
        if not 0 < lo <= hi <= 1:
            raise DataError(f"Invalid opacity range {self.opacity_range}")
        if self.extent <= 0 or self.base_scale <= 0 or self.focal <= 0:
            raise DataError("extent, base_scale and focal must be positive")
        if self.noise < 0:
            raise DataError(f"noise must be non-negative, got {self.noise}")
        if self.texture_beta and not 0 < self.texture_beta < BETA_MAX:
            raise DataError(f"texture_beta must be 0 or in (0, sqrt(3)), got {self.texture_beta}")
        if not 0 <= self.texture_drift < 1:
            raise DataError(f"texture_drift must lie in [0, 1), got {self.texture_drift}")

    @classmethod
    def from_config(cls, config: configparser.ConfigParser = CONFIG) -> "SceneSpec":
        sect = config["synth"]
        return cls(
            gaussian_count=sect.getint("gaussian_count"),
            extent=sect.getfloat("extent"),
            anisotropy_range=(sect.getfloat("anisotropy_min"), sect.getfloat("anisotropy_max")),
            camera_count=sect.getint("camera_count"),
            ring_radius=sect.getfloat("ring_radius"),
            image_size=(sect.getint("height"), sect.getint("width")),
            feature_dim=sect.getint("feature_dim"),
            noise=sect.getfloat("noise"),
            seed=sect.getint("seed"),
            query_count=sect.getint("query_count"),
            base_scale=sect.getfloat("base_scale"),
            opacity_range=(sect.getfloat("opacity_min"), sect.getfloat("opacity_max")),
            focal=sect.getfloat("focal"),
            ring_height=sect.getfloat("ring_height"),
            texture_beta=sect.getfloat("texture_beta"),
            texture_drift=sect.getfloat("texture_drift"),
        )

    def to_config(self) -> configparser.ConfigParser:
        """Inverse of `from_config`; written as spec.ini."""
        flat = asdict(self)
        flat["anisotropy_min"], flat["anisotropy_max"] = flat.pop("anisotropy_range")
        flat["height"], flat["width"] = flat.pop("image_size")
        flat["opacity_min"], flat["opacity_max"] = flat.pop("opacity_range")
        parser = configparser.ConfigParser()
        parser["synth"] = {key: repr(val) for key, val in flat.items()}
        return parser


@dataclass(frozen=True)
class SyntheticScene:
    scene: GaussianScene
    cameras: list[CameraView]
    queries: list[CameraView]
    features: dict[int, np.ndarray]
    query_features: dict[int, np.ndarray]
    spec: Optional[SceneSpec] = None
    texture: Optional[GaussianScene] = None


def look_at(view_id: int, center: np.ndarray, spec: SceneSpec) -> CameraView:
    """Camera at `center` looking at the origin, image y pointing down."""
    forward = -center / np.linalg.norm(center)
    right = np.cross(forward, WORLD_UP)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    height, width = spec.image_size
    return CameraView(
        view_id=view_id,
        fx=spec.focal,
        fy=spec.focal,
        cx=(width - 1) / 2,
        cy=(height - 1) / 2,
        width=width,
        height=height,
        rotation_wc=matrix_to_quat(rot),
        translation_wc=-rot @ center,
    )


def ring_cameras(spec: SceneSpec, count: int, phase: float, height: float) -> list[CameraView]:
    angles = 2 * np.pi * (np.arange(count) + phase) / count
    centers = np.stack(
        [
            spec.ring_radius * np.cos(angles),
            spec.ring_radius * np.sin(angles),
            np.full(count, height),
        ],
        axis=1,
    )
    return [look_at(i, c, spec) for i, c in enumerate(centers)]


def random_scene(spec: SceneSpec, rng: np.random.Generator) -> GaussianScene:
    n = spec.gaussian_count
    half = spec.extent / 2
    means = rng.uniform(-half, half, size=(n, 3))

    minor = spec.base_scale * rng.uniform(0.5, 1.5, size=n)
    ratio = rng.uniform(*spec.anisotropy_range, size=n)
    scales = np.stack([minor * ratio, minor, minor], axis=1)

    xyzw = Rotation.random(n, rng).as_quat()
    rotations = xyzw[:, [3, 0, 1, 2]]

    feats = rng.normal(size=(n, spec.feature_dim))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)

    return GaussianScene(
        means=means,
        rotations=rotations,
        scales=scales,
        opacities=rng.uniform(*spec.opacity_range, size=n),
        colors=rng.uniform(0, 1, size=(n, 3)),
        features=feats,
    )


def _orthonormal_pair(feats: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two unit rows per row of `feats`, orthogonal to it and to each other."""
    draws = rng.normal(size=(2,) + feats.shape)
    first = draws[0] - np.einsum("nd,nd->n", draws[0], feats)[:, None] * feats
    first /= np.linalg.norm(first, axis=1, keepdims=True)
    second = draws[1] - np.einsum("nd,nd->n", draws[1], feats)[:, None] * feats
    second -= np.einsum("nd,nd->n", second, first)[:, None] * first
    second /= np.linalg.norm(second, axis=1, keepdims=True)
    return first, second


def texture_scene(scene: GaussianScene, spec: SceneSpec, rng: np.random.Generator) -> GaussianScene:
    """Three spherical feature cells per Gaussian, centered where a split with
    beta = `spec.texture_beta` puts its children; cell k of Gaussian i sits at
    3i + k with parent_id i.

    Cells are as thick as the Gaussian's minor axis and as opaque as the
    Gaussian. The center cell carries the Gaussian's descriptor, the plus cell
    one at cosine `texture_drift` from it, the minus cell one orthogonal to
    both.
    """
    n = len(scene)
    cells = split_scene(scene, spec.texture_beta)
    center = scene.features
    drift, other = _orthonormal_pair(center, rng)
    plus = spec.texture_drift * center + np.sqrt(1 - spec.texture_drift**2) * drift
    feats = np.stack([other, center, plus], axis=1)

    minor = np.repeat(scene.scales.min(axis=1), 3)
    return GaussianScene(
        means=cells.means,
        rotations=cells.rotations,
        scales=np.repeat(minor[:, None], 3, axis=1),
        opacities=np.repeat(scene.opacities, 3),
        colors=cells.colors,
        features=feats.reshape(3 * n, spec.feature_dim),
        parent_ids=cells.parent_ids,
    )


def generate_synthetic_scene(spec: SceneSpec) -> SyntheticScene:
    """Deterministic given `spec.seed`. Redraws the Gaussians when some camera
    sees none of them.

    Images are rendered from the texture cells when `spec.texture_beta` is
    set, else from the Gaussians themselves; features are stored as float32.
    """
    rng = np.random.default_rng(spec.seed)
    cameras = ring_cameras(spec, spec.camera_count, 0.0, spec.ring_height)
    queries = ring_cameras(spec, spec.query_count, 0.5, 0.5 * spec.ring_height)

    for attempt in range(1, MAX_ATTEMPTS + 1):
        scene = random_scene(spec, rng)
        blind = [c.view_id for c in cameras + queries if not len(project_scene(scene, c))]
        if not blind:
            break
        LOGGER.warning("Attempt %d: views %s see no Gaussians; regenerating", attempt, blind)
    else:
        raise DataError(f"Some camera saw no Gaussians in {MAX_ATTEMPTS} attempts")

    texture = texture_scene(scene, spec, rng) if spec.texture_beta else None
    source = scene if texture is None else texture
    features = {
        cam.view_id: render_feature_image(source, cam).astype(np.float32)
        for cam in tqdm(cameras, desc="train views", disable=None)
    }
    query_features = {}
    for cam in tqdm(queries, desc="query views", disable=None):
        image = render_feature_image(source, cam)
        if spec.noise > 0:
            image = image + rng.normal(0.0, spec.noise, size=image.shape)
        query_features[cam.view_id] = image.astype(np.float32)

    return SyntheticScene(scene, cameras, queries, features, query_features, spec, texture)


# scene dirs {{{


def save_scene_dir(synth: SyntheticScene, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    save_splat_ply(synth.scene, os.path.join(directory, "scene.ply"))
    save_cameras(synth.cameras, os.path.join(directory, "cameras.ini"))
    save_cameras(synth.queries, os.path.join(directory, "queries.ini"))
    write_feature_dir(synth.features, os.path.join(directory, "features"))
    write_feature_dir(synth.query_features, os.path.join(directory, "query_features"))
    if synth.texture is not None:
        save_splat_ply(synth.texture, os.path.join(directory, "texture.ply"))
    if synth.spec is not None:
        with open(os.path.join(directory, "spec.ini"), "w", encoding="utf-8") as f:
            synth.spec.to_config().write(f)


def load_scene_dir(directory: str) -> SyntheticScene:
    if not os.path.isdir(directory):
        raise FileNotFoundError(directory)
    spec = None
    spec_file = os.path.join(directory, "spec.ini")
    if os.path.isfile(spec_file):
        parser = configparser.ConfigParser()
        parser.read(spec_file, encoding="utf-8")
        spec = SceneSpec.from_config(parser)
    texture = None
    texture_file = os.path.join(directory, "texture.ply")
    if os.path.isfile(texture_file):
        texture = load_splat_ply(texture_file)
    return SyntheticScene(
        scene=load_splat_ply(os.path.join(directory, "scene.ply")),
        cameras=load_cameras(os.path.join(directory, "cameras.ini")),
        queries=load_cameras(os.path.join(directory, "queries.ini")),
        features=read_feature_dir(os.path.join(directory, "features")),
        query_features=read_feature_dir(os.path.join(directory, "query_features")),
        spec=spec,
        texture=texture,
    )


# }}}
