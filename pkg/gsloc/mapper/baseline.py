"""Comparison map builders that skip composition weights."""

from collections.abc import Mapping
from collections.abc import Sequence

import numpy as np
from scipy.spatial import cKDTree

from gsloc.core import LOGGER
from gsloc.core import DataError
from gsloc.mapper.core import LocalizationMap
from gsloc.render.rasterizer import NEAR_PLANE
from gsloc.scene.core import CameraView
from gsloc.scene.core import GaussianScene


def _unit_rows(feats: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(feats, axis=-1, keepdims=True)
    return np.divide(feats, norms, out=np.zeros_like(feats), where=norms > 0)


def projection_average(
    scene: GaussianScene,
    selected,
    cameras: Sequence[CameraView],
    feature_images: Mapping[int, np.ndarray],
) -> LocalizationMap:
    """Project each selected center into every view and average the
    unit-normalized features of the nearest pixels, uniformly.

    Gaussians whose center projects into no image are dropped.
    """
    selected = np.asarray(selected, dtype=np.int64)
    means = scene.means[selected]
    dim = None
    total = None
    hits = np.zeros(len(selected))

    for cam in cameras:
        if cam.view_id not in feature_images:
            raise DataError(f"No feature image for view {cam.view_id}")
        image = feature_images[cam.view_id]
        if dim is None:
            dim = image.shape[-1]
            total = np.zeros((len(selected), dim))
        elif image.shape[-1] != dim:
            raise DataError(f"View {cam.view_id}: {image.shape[-1]} channels, expected {dim}")

        pts = means @ cam.R.T + cam.t
        z = pts[:, 2]
        front = z > NEAR_PLANE
        safe_z = np.where(front, z, 1.0)
        cols = np.rint(cam.fx * pts[:, 0] / safe_z + cam.cx).astype(np.int64)
        rows = np.rint(cam.fy * pts[:, 1] / safe_z + cam.cy).astype(np.int64)
        visible = front & (cols >= 0) & (cols < cam.width) & (rows >= 0) & (rows < cam.height)

        idx = np.flatnonzero(visible)
        total[idx] += _unit_rows(image[rows[idx], cols[idx]])
        hits[idx] += 1

    if total is None:
        raise DataError("No cameras to project into")
    seen = hits > 0
    if not seen.all():
        LOGGER.warning("Dropped %d Gaussians that project into no view", int((~seen).sum()))
    return LocalizationMap(means[seen], total[seen] / hits[seen, None])


def nn_upsample(lmap: LocalizationMap, k: int = 3) -> LocalizationMap:
    """Densify a map with the midpoint of every point and each of its k
    nearest map points; descriptors are interpolated linearly."""
    n = len(lmap)
    if n < 2:
        return lmap
    m = min(k + 1, n)
    _, idx = cKDTree(lmap.positions).query(lmap.positions, k=m)
    idx = np.asarray(idx).reshape(n, m)

    pairs = [(i, int(j)) for i in range(n) for j in idx[i] if j != i]
    pairs = np.unique(np.sort(np.array(pairs), axis=1), axis=0)
    a, b = pairs[:, 0], pairs[:, 1]

    positions = np.concatenate([lmap.positions, 0.5 * (lmap.positions[a] + lmap.positions[b])])
    descriptors = np.concatenate(
        [lmap.descriptors, 0.5 * (lmap.descriptors[a] + lmap.descriptors[b])]
    )
    LOGGER.info("Upsampled map from %d to %d points", n, len(positions))
    return LocalizationMap(positions, descriptors, lmap.meta)
