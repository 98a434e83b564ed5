"""Query keypoints, direct 2D-3D matching and pose metrics."""

from collections import Counter
from dataclasses import dataclass
from typing import Iterator
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.spatial.transform import Rotation

from gsloc.core import DataError
from gsloc.mapper.core import LocalizationMap
from gsloc.scene.core import Pose


@dataclass(frozen=True)
class Keypoints:
    pixels: np.ndarray  # (K, 2) as (x, y)
    descriptors: np.ndarray  # (K, D), unit norm
    responses: np.ndarray  # (K,)

    def __len__(self) -> int:
        return len(self.pixels)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return zip(self.pixels, self.descriptors)


@dataclass(frozen=True)
class Correspondence:
    pixel: np.ndarray  # (x, y)
    point: np.ndarray
    point_index: int
    similarity: float


# keypoints {{{


def _refine(log_mag: np.ndarray, row: int, col: int) -> tuple[float, float]:
    """Sub-pixel offset (dx, dy) of a peak from a quadratic fit to the 3x3
    log-magnitude patch; (0, 0) when the fit is not a maximum near the pixel."""
    p = log_mag[row - 1 : row + 2, col - 1 : col + 2]
    grad = np.array([p[1, 2] - p[1, 0], p[2, 1] - p[0, 1]]) / 2
    dxx = p[1, 2] - 2 * p[1, 1] + p[1, 0]
    dyy = p[2, 1] - 2 * p[1, 1] + p[0, 1]
    dxy = (p[2, 2] - p[2, 0] - p[0, 2] + p[0, 0]) / 4
    hess = np.array([[dxx, dxy], [dxy, dyy]])
    if dxx >= 0 or np.linalg.det(hess) <= 0:
        return 0.0, 0.0
    offset = -np.linalg.solve(hess, grad)
    if (np.abs(offset) > 0.5).any():
        return 0.0, 0.0
    return float(offset[0]), float(offset[1])


def extract_query_keypoints(
    feature_image: np.ndarray,
    max_kp: int,
    feature_dim: Optional[int] = None,
    subpixel: bool = True,
) -> Keypoints:
    """Local maxima (3x3) of the feature magnitude, strongest first.

    Ties in response are broken by row-major pixel order.
    """
    image = np.asarray(feature_image, dtype=np.float64)
    if image.ndim != 3:
        raise DataError(f"Expected an (H, W, D) feature image, got shape {image.shape}")
    height, width, dim = image.shape
    if feature_dim is not None and dim != feature_dim:
        raise DataError(f"Query features have D = {dim}, map has D = {feature_dim}")

    mag = np.linalg.norm(image, axis=2)
    peaks = (mag > 0) & (mag == maximum_filter(mag, size=3, mode="constant", cval=0.0))
    rows, cols = np.nonzero(peaks)
    resp = mag[rows, cols]
    order = np.lexsort((rows * width + cols, -resp))[:max_kp]
    rows, cols, resp = rows[order], cols[order], resp[order]

    pixels = np.stack([cols, rows], axis=1).astype(np.float64)
    if subpixel and len(rows):
        with np.errstate(divide="ignore"):
            log_mag = np.log(mag)
        for i, (r, c) in enumerate(zip(rows, cols)):
            if not (0 < r < height - 1 and 0 < c < width - 1):
                continue
            if not np.isfinite(log_mag[r - 1 : r + 2, c - 1 : c + 2]).all():
                continue
            pixels[i] += _refine(log_mag, r, c)

    descriptors = image[rows, cols] / resp[:, None] if len(rows) else np.zeros((0, dim))
    return Keypoints(pixels.reshape(-1, 2), descriptors, resp)


# }}}

# matching {{{


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs cosine similarity; rows with zero norm match nothing."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ua = np.divide(a, na[:, None], out=np.zeros_like(a), where=na[:, None] > 0)
    ub = np.divide(b, nb[:, None], out=np.zeros_like(b), where=nb[:, None] > 0)
    sim = ua @ ub.T
    sim[na == 0, :] = -np.inf
    sim[:, nb == 0] = -np.inf
    return sim


def match(
    query: Keypoints,
    lmap: LocalizationMap,
    min_sim: float = 0.5,
    mutual: bool = True,
) -> list[Correspondence]:
    """Nearest map point by cosine similarity for every keypoint, ordered by
    keypoint. Mutual mode keeps a pair only if the keypoint is also the best
    one for that point, so no point is used twice."""
    if not len(query) or not len(lmap):
        return []
    if query.descriptors.shape[1] != lmap.feature_dim:
        raise DataError(
            f"Query descriptors have D = {query.descriptors.shape[1]},"
            f" map has D = {lmap.feature_dim}"
        )

    sim = _cosine(query.descriptors, lmap.descriptors)
    best_point = np.argmax(sim, axis=1)
    best_sim = sim[np.arange(len(sim)), best_point]
    keep = best_sim >= min_sim
    if mutual:
        best_query = np.argmax(sim, axis=0)
        keep &= best_query[best_point] == np.arange(len(sim))

    return [
        Correspondence(
            pixel=query.pixels[q],
            point=lmap.positions[best_point[q]],
            point_index=int(best_point[q]),
            similarity=float(best_sim[q]),
        )
        for q in np.flatnonzero(keep)
    ]


def count_many_to_one(correspondences: list[Correspondence]) -> int:
    """Correspondences whose map point is shared with another one."""
    counts = Counter(c.point_index for c in correspondences)
    return sum(n for n in counts.values() if n >= 2)


# }}}


def pose_error(est, gt) -> tuple[float, float]:
    """(camera center distance in cm, rotation angle in degrees). Both
    arguments need rotation_wc and translation_wc."""
    est_pose = Pose(est.rotation_wc, est.translation_wc)
    gt_pose = Pose(gt.rotation_wc, gt.translation_wc)
    translation_cm = 100.0 * float(np.linalg.norm(est_pose.center - gt_pose.center))
    delta = Rotation.from_matrix(est_pose.R @ gt_pose.R.T)
    return translation_cm, float(np.degrees(delta.magnitude()))
