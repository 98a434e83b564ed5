"""P3P + RANSAC pose estimation with Levenberg-Marquardt refinement."""

import configparser
import json
import math
import os
import time
from dataclasses import dataclass
from dataclasses import replace

import cv2
import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from gsloc.config import CONFIG
from gsloc.core import DataError
from gsloc.core import SchemaError
from gsloc.localizer.core import Correspondence
from gsloc.localizer.core import count_many_to_one
from gsloc.localizer.core import extract_query_keypoints
from gsloc.localizer.core import match
from gsloc.mapper.core import LocalizationMap
from gsloc.scene.core import CameraView
from gsloc.scene.core import Pose
from gsloc.scene.core import matrix_to_quat
from gsloc.scene.core import quat_to_matrix

# name: (min_iter, max_iter)
PRESETS = {
    "efficient": (100, 1000),
    "default": (1000, 100000),
}

MIN_INLIERS = 4


@dataclass(frozen=True)
class RansacConfig:
    min_iter: int = 1000
    max_iter: int = 100000
    reproj_px: float = 4.0
    confidence: float = 0.9999
    seed: int = 0

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "RansacConfig":
        if name not in PRESETS:
            raise DataError(f"Unknown RANSAC preset '{name}'; expected one of {list(PRESETS)}")
        min_iter, max_iter = PRESETS[name]
        return cls(min_iter=min_iter, max_iter=max_iter, **overrides)


@dataclass(frozen=True)
class PoseEstimate:
    rotation_wc: np.ndarray
    translation_wc: np.ndarray
    inlier_count: int
    iterations_run: int
    many_to_one_count: int = 0
    runtime_ms: float = 0.0
    success: bool = True
    inliers: tuple[int, ...] = ()

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation_wc, self.translation_wc)


# ransac {{{


def _reprojection_errors(
    rot: np.ndarray,
    trans: np.ndarray,
    points: np.ndarray,
    pixels: np.ndarray,
    K: np.ndarray,
) -> np.ndarray:
    cam = points @ rot.T + trans
    z = cam[:, 2]
    front = z > 0
    proj = cam[:, :2] / np.where(front, z, 1.0)[:, None]
    proj = proj * [K[0, 0], K[1, 1]] + [K[0, 2], K[1, 2]]
    err = np.linalg.norm(proj - pixels, axis=1)
    return np.where(front, err, np.inf)


def _p3p(
    points: np.ndarray,
    pixels: np.ndarray,
    K: np.ndarray,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Up to four (R, t) hypotheses from three correspondences."""
    try:
        _, rvecs, tvecs = cv2.solveP3P(
            np.ascontiguousarray(points.reshape(3, 1, 3)),
            np.ascontiguousarray(pixels.reshape(3, 1, 2)),
            K,
            np.zeros(4),
            flags=cv2.SOLVEPNP_P3P,
        )
    except cv2.error:
        return []
    return [
        (cv2.Rodrigues(r)[0], np.asarray(t, dtype=np.float64).reshape(3))
        for r, t in zip(rvecs, tvecs)
    ]


def _needed_iterations(inlier_ratio: float, confidence: float) -> float:
    if inlier_ratio >= 1:
        return 0
    if inlier_ratio <= 0:
        return math.inf
    miss = 1 - inlier_ratio**3
    return math.log(1 - confidence) / math.log(miss)


def _refine(
    rot: np.ndarray,
    trans: np.ndarray,
    points: np.ndarray,
    pixels: np.ndarray,
    K: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Levenberg-Marquardt on the reprojection residuals of `points`."""

    def residuals(x: np.ndarray) -> np.ndarray:
        r = Rotation.from_rotvec(x[:3]).as_matrix()
        cam = points @ r.T + x[3:]
        proj = cam[:, :2] / cam[:, 2:3]
        proj = proj * [K[0, 0], K[1, 1]] + [K[0, 2], K[1, 2]]
        return (proj - pixels).ravel()

    x0 = np.concatenate([Rotation.from_matrix(rot).as_rotvec(), trans])
    result = least_squares(residuals, x0, method="lm", xtol=1e-12, ftol=1e-12, gtol=1e-12)
    return Rotation.from_rotvec(result.x[:3]).as_matrix(), result.x[3:]


def solve_pnp_ransac(
    correspondences: list[Correspondence],
    cam: CameraView,
    cfg: RansacConfig = RansacConfig(),
) -> PoseEstimate:
    """Seeded P3P RANSAC, stopping early once `cfg.confidence` is reached
    (never before min_iter, never after max_iter), then LM on all inliers.

    `success` is False when no hypothesis reaches four inliers.
    """
    start = time.perf_counter()
    n = len(correspondences)
    if n < MIN_INLIERS:
        raise DataError(f"PnP needs at least {MIN_INLIERS} correspondences, got {n}")

    points = np.array([c.point for c in correspondences], dtype=np.float64)
    pixels = np.array([c.pixel for c in correspondences], dtype=np.float64)
    K = cam.K
    rng = np.random.default_rng(cfg.seed)

    best_rot, best_trans = np.eye(3), np.zeros(3)
    best_inliers = np.zeros(n, dtype=bool)
    needed = math.inf
    it = 0
    while it < cfg.max_iter and (it < cfg.min_iter or it < needed):
        sample = rng.choice(n, size=3, replace=False)
        it += 1
        for rot, trans in _p3p(points[sample], pixels[sample], K):
            inliers = _reprojection_errors(rot, trans, points, pixels, K) < cfg.reproj_px
            if inliers.sum() > best_inliers.sum():
                best_rot, best_trans, best_inliers = rot, trans, inliers
                needed = _needed_iterations(inliers.mean(), cfg.confidence)

    many_to_one = count_many_to_one(correspondences)
    if best_inliers.sum() < MIN_INLIERS:
        return PoseEstimate(
            rotation_wc=np.array([1.0, 0.0, 0.0, 0.0]),
            translation_wc=np.zeros(3),
            inlier_count=int(best_inliers.sum()),
            iterations_run=it,
            many_to_one_count=many_to_one,
            runtime_ms=(time.perf_counter() - start) * 1000,
            success=False,
        )

    rot, trans = _refine(best_rot, best_trans, points[best_inliers], pixels[best_inliers], K)
    quat = matrix_to_quat(rot)
    # score under the stored quaternion so reported inliers match the pose
    errors = _reprojection_errors(quat_to_matrix(quat), trans, points, pixels, K)
    refined = errors < cfg.reproj_px
    if refined.sum() >= best_inliers.sum():
        best_inliers = refined
    else:
        quat, trans = matrix_to_quat(best_rot), best_trans

    return PoseEstimate(
        rotation_wc=quat,
        translation_wc=np.asarray(trans, dtype=np.float64),
        inlier_count=int(best_inliers.sum()),
        iterations_run=it,
        many_to_one_count=many_to_one,
        runtime_ms=(time.perf_counter() - start) * 1000,
        success=True,
        inliers=tuple(int(i) for i in np.flatnonzero(best_inliers)),
    )


# }}}

# pipeline {{{


@dataclass(frozen=True)
class LocalizeConfig:
    ransac: RansacConfig = RansacConfig()
    preset: str = "default"
    max_kp: int = 1024
    min_sim: float = 0.5
    mutual: bool = True
    subpixel: bool = True

    @classmethod
    def from_config(cls, config: configparser.ConfigParser = CONFIG) -> "LocalizeConfig":
        sect = config["localize"]
        preset = sect.get("preset")
        return cls(
            ransac=RansacConfig.from_preset(
                preset,
                reproj_px=sect.getfloat("reproj_px"),
                confidence=sect.getfloat("confidence"),
                seed=sect.getint("seed"),
            ),
            preset=preset,
            max_kp=sect.getint("max_kp"),
            min_sim=sect.getfloat("min_sim"),
            mutual=sect.getboolean("mutual"),
            subpixel=sect.getboolean("subpixel"),
        )

    def with_preset(self, name: str) -> "LocalizeConfig":
        ransac = RansacConfig.from_preset(
            name,
            reproj_px=self.ransac.reproj_px,
            confidence=self.ransac.confidence,
            seed=self.ransac.seed,
        )
        return replace(self, ransac=ransac, preset=name)


def localize(
    feature_image: np.ndarray,
    lmap: LocalizationMap,
    cam: CameraView,
    cfg: LocalizeConfig = LocalizeConfig(),
) -> PoseEstimate:
    """Keypoints -> matches -> RANSAC. Too few matches gives success=False
    rather than an error."""
    start = time.perf_counter()
    keypoints = extract_query_keypoints(feature_image, cfg.max_kp, lmap.feature_dim, cfg.subpixel)
    corrs = match(keypoints, lmap, cfg.min_sim, cfg.mutual)
    if len(corrs) < MIN_INLIERS:
        return PoseEstimate(
            rotation_wc=np.array([1.0, 0.0, 0.0, 0.0]),
            translation_wc=np.zeros(3),
            inlier_count=0,
            iterations_run=0,
            many_to_one_count=count_many_to_one(corrs),
            runtime_ms=(time.perf_counter() - start) * 1000,
            success=False,
        )
    est = solve_pnp_ransac(corrs, cam, cfg.ransac)
    return replace(est, runtime_ms=(time.perf_counter() - start) * 1000)


# }}}

# pose files {{{


def save_pose(est: PoseEstimate, path: str) -> None:
    parser = configparser.ConfigParser()
    parser["pose"] = {
        "q_wc": json.dumps([float(x) for x in est.rotation_wc]),
        "t_wc": json.dumps([float(x) for x in est.translation_wc]),
        "inlier_count": str(est.inlier_count),
        "iterations_run": str(est.iterations_run),
        "many_to_one_count": str(est.many_to_one_count),
        "runtime_ms": f"{est.runtime_ms:.3f}",
        "success": "true" if est.success else "false",
    }
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)


def load_pose(path: str) -> PoseEstimate:
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    if "pose" not in parser:
        raise SchemaError(f"{path}: missing [pose] section")
    sect = parser["pose"]
    try:
        return PoseEstimate(
            rotation_wc=np.array(json.loads(sect["q_wc"]), dtype=np.float64),
            translation_wc=np.array(json.loads(sect["t_wc"]), dtype=np.float64),
            inlier_count=sect.getint("inlier_count"),
            iterations_run=sect.getint("iterations_run"),
            many_to_one_count=sect.getint("many_to_one_count"),
            runtime_ms=sect.getfloat("runtime_ms"),
            success=sect.getboolean("success"),
        )
    except KeyError as e:
        raise SchemaError(f"{path}: missing key {e}") from e


# }}}
