"""Domain types for Gaussian scenes and pinhole cameras.

Conventions used throughout the package:

- quaternions are stored (w, x, y, z), as in the splat PLY layout
- camera poses map world to camera: X_cam = R @ X_world + t
- the camera looks down +z, image x grows with columns, image y with rows
- pixel centers sit on integer coordinates (col, row)
"""

from dataclasses import dataclass
from dataclasses import field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from gsloc.core import DataError

QUAT_TOL = 1e-9


# quaternion helpers {{{


def quat_to_matrix(quats: np.ndarray) -> np.ndarray:
    """(..., 4) wxyz quaternions -> (..., 3, 3) rotation matrices."""
    quats = np.asarray(quats, dtype=np.float64)
    flat = quats.reshape(-1, 4)
    if not len(flat):
        return np.zeros((*quats.shape[:-1], 3, 3))
    mats = Rotation.from_quat(flat[:, [1, 2, 3, 0]]).as_matrix()
    return mats.reshape(*quats.shape[:-1], 3, 3)


def matrix_to_quat(mat: np.ndarray) -> np.ndarray:
    """Rotation matrix -> wxyz quaternion with w >= 0."""
    xyzw = Rotation.from_matrix(np.asarray(mat, dtype=np.float64)).as_quat()
    quat = xyzw[..., [3, 0, 1, 2]]
    if quat[0] < 0:
        quat = -quat
    return quat


def normalize_quat(quat) -> np.ndarray:
    quat = np.asarray(quat, dtype=np.float64)
    norm = np.linalg.norm(quat)
    if not np.isfinite(norm) or norm == 0:
        raise DataError(f"Quaternion {quat.tolist()} cannot be normalized")
    return quat / norm


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    arr = np.array(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


# }}}


@dataclass(frozen=True)
class Gaussian:
    """A single anisotropic 3D primitive. Scale holds standard deviations."""

    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    color: np.ndarray
    feature: Optional[np.ndarray] = None
    parent_id: Optional[int] = None

    def __post_init__(self):
        for name in ["mean", "rotation", "scale", "color"]:
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.feature is not None:
            object.__setattr__(self, "feature", _frozen(self.feature))

        if abs(np.linalg.norm(self.rotation) - 1) > QUAT_TOL:
            raise DataError(f"Rotation {self.rotation.tolist()} is not a unit quaternion")
        if not (self.scale > 0).all():
            raise DataError(f"Scale {self.scale.tolist()} has non-positive entries")
        if not 0 < self.opacity <= 1:
            raise DataError(f"Opacity {self.opacity} outside (0, 1]")


def covariance_of(g: Gaussian) -> np.ndarray:
    """Sigma = R S S^T R^T"""
    return covariances(g.rotation[None], g.scale[None])[0]


def covariances(rotations: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Vectorized `covariance_of` over (N, 4) quaternions and (N, 3) scales."""
    rot = quat_to_matrix(rotations)
    cov = rot @ (scales[:, :, None] ** 2 * np.swapaxes(rot, 1, 2))
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform."""

    rotation_wc: np.ndarray
    translation_wc: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation_wc", _frozen(self.rotation_wc))
        object.__setattr__(self, "translation_wc", _frozen(self.translation_wc))

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation_wc)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation_wc)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, -R^T t."""
        return -self.R.T @ self.t


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera: intrinsics in pixels, world-to-camera extrinsics."""

    view_id: int
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation_wc: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation_wc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation_wc", _frozen(self.rotation_wc))
        object.__setattr__(self, "translation_wc", _frozen(self.translation_wc))

        if self.fx <= 0 or self.fy <= 0:
            raise DataError(f"View {self.view_id}: focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"View {self.view_id}: image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataError(f"View {self.view_id}: principal point outside image")
        if abs(np.linalg.norm(self.rotation_wc) - 1) > QUAT_TOL:
            raise DataError(f"View {self.view_id}: rotation is not a unit quaternion")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [
                [self.fx, 0.0, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation_wc, self.translation_wc)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation_wc)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation_wc)

    @property
    def center(self) -> np.ndarray:
        return self.pose.center

    def with_pose(self, pose: Pose) -> "CameraView":
        return CameraView(
            self.view_id,
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            pose.rotation_wc,
            pose.translation_wc,
        )


@dataclass(frozen=True)
class GaussianScene:
    """Struct-of-arrays Gaussian set.

    Arrays are read-only; every transformation builds a new scene. A missing
    parent is stored as -1 in `parent_ids`.
    """

    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    features: Optional[np.ndarray] = None
    parent_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(np.asarray(self.means).reshape(-1, 3))
        if self.features is None:
            object.__setattr__(self, "features", np.zeros((n, 0)))
        if self.parent_ids is None:
            object.__setattr__(self, "parent_ids", np.full(n, -1))

        shapes = {
            "means": (n, 3),
            "rotations": (n, 4),
            "scales": (n, 3),
            "opacities": (n,),
            "colors": (n, 3),
        }
        for name, shape in shapes.items():
            arr = _frozen(np.asarray(getattr(self, name), dtype=np.float64).reshape(shape))
            object.__setattr__(self, name, arr)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            feats = feats.reshape(n, -1) if feats.size else np.zeros((n, 0))
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "parent_ids", _frozen(self.parent_ids, np.int64))

        if not n:
            return
        if not (self.scales > 0).all():
            raise DataError("All scale components must be positive")
        if not ((self.opacities > 0) & (self.opacities <= 1)).all():
            raise DataError("All opacities must lie in (0, 1]")
        norms = np.linalg.norm(self.rotations, axis=1)
        if (np.abs(norms - 1) > 1e-6).any():
            raise DataError("All rotations must be unit quaternions")

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian:
        parent = int(self.parent_ids[i])
        return Gaussian(
            mean=self.means[i],
            rotation=normalize_quat(self.rotations[i]),
            scale=self.scales[i],
            opacity=float(self.opacities[i]),
            color=self.colors[i],
            feature=self.features[i] if self.feature_dim else None,
            parent_id=parent if parent >= 0 else None,
        )

    @property
    def gaussians(self) -> list[Gaussian]:
        return [self[i] for i in range(len(self))]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box (min corner, max corner) of the means."""
        if not len(self):
            return np.zeros(3), np.zeros(3)
        return self.means.min(axis=0), self.means.max(axis=0)

    @classmethod
    def from_gaussians(cls, gaussians: list[Gaussian]) -> "GaussianScene":
        if not gaussians:
            return cls.empty()
        dims = {0 if g.feature is None else len(g.feature) for g in gaussians}
        if len(dims) > 1:
            raise DataError(f"Gaussians disagree on feature dimensionality: {dims}")
        dim = dims.pop()
        return cls(
            means=np.array([g.mean for g in gaussians]),
            rotations=np.array([g.rotation for g in gaussians]),
            scales=np.array([g.scale for g in gaussians]),
            opacities=np.array([g.opacity for g in gaussians]),
            colors=np.array([g.color for g in gaussians]),
            features=np.array([g.feature if dim else [] for g in gaussians]).reshape(
                len(gaussians), dim
            ),
            parent_ids=np.array(
                [-1 if g.parent_id is None else g.parent_id for g in gaussians]
            ),
        )

    @classmethod
    def empty(cls, feature_dim: int = 0) -> "GaussianScene":
        return cls(
            means=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            scales=np.zeros((0, 3)),
            opacities=np.zeros(0),
            colors=np.zeros((0, 3)),
            features=np.zeros((0, feature_dim)),
        )

    def subset(self, indices) -> "GaussianScene":
        idx = np.asarray(indices, dtype=np.int64)
        return GaussianScene(
            means=self.means[idx],
            rotations=self.rotations[idx],
            scales=self.scales[idx],
            opacities=self.opacities[idx],
            colors=self.colors[idx],
            features=self.features[idx],
            parent_ids=self.parent_ids[idx],
        )

    def with_features(self, features: np.ndarray) -> "GaussianScene":
        return GaussianScene(
            means=self.means,
            rotations=self.rotations,
            scales=self.scales,
            opacities=self.opacities,
            colors=self.colors,
            features=features,
            parent_ids=self.parent_ids,
        )
