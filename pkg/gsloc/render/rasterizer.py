"""Software splat rasterizer exposing per-pixel composition weights.

The weight of Gaussian n at a pixel is its clamped screen-space opacity times
the transmittance left by the Gaussians in front of it:

    w_n = a'_n * prod_{k<n} (1 - a'_k)

Colors and features are both composited with these same weights. A Gaussian
only touches pixels inside its 3-sigma ellipse, so binning Gaussians into
16x16 tiles by the ellipse's bounding box loses nothing; `rasterize` and the
naive per-ray `rasterize_naive` agree exactly when given the same stop
threshold.
"""

import configparser
from dataclasses import dataclass
from typing import Iterator
from typing import NamedTuple
from typing import Optional

import numpy as np

from gsloc.config import CONFIG
from gsloc.core import DataError
from gsloc.scene.core import CameraView
from gsloc.scene.core import Gaussian
from gsloc.scene.core import GaussianScene
from gsloc.scene.core import covariances

NEAR_PLANE = 0.01
LOW_PASS = 0.3
ALPHA_MAX = 0.99
STOP_TRANSMITTANCE = 1e-4
DEFAULT_FLOOR = 0.01
TILE = 16

# -0.5 * 3^2; pixels further than 3 sigma (Mahalanobis) are never touched
MIN_POWER = -4.5


@dataclass(frozen=True)
class ScreenGaussian:
    source_index: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


class ScreenGaussians(NamedTuple):
    """Projected Gaussians, sorted front to back (ties by source index)."""

    source_index: np.ndarray  # (M,)
    mean2d: np.ndarray  # (M, 2), (x, y) pixels
    cov2d: np.ndarray  # (M, 2, 2)
    conic: np.ndarray  # (M, 3), inverse cov2d as (a, b, c)
    depth: np.ndarray  # (M,)
    half_extent: np.ndarray  # (M, 2), 3-sigma bounding box half sizes

    def __len__(self) -> int:
        return len(self.source_index)

    def take(self, idx) -> "ScreenGaussians":
        return ScreenGaussians(*(arr[idx] for arr in self))


@dataclass(frozen=True)
class PixelContribution:
    gaussian_index: int
    pixel: tuple[int, int]
    weight: float


class Contributions(NamedTuple):
    """Column view of all emitted PixelContributions of one render."""

    gaussian_index: np.ndarray
    row: np.ndarray
    col: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return len(self.weight)

    def __iter__(self) -> Iterator[PixelContribution]:  # type: ignore[override]
        for g, r, c, w in zip(self.gaussian_index, self.row, self.col, self.weight):
            yield PixelContribution(int(g), (int(r), int(c)), float(w))


@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    contributions: Contributions
    transmittance: np.ndarray  # (H, W), left after compositing
    features: Optional[np.ndarray] = None  # (H, W, D)

    @property
    def weight_sum(self) -> np.ndarray:
        return 1.0 - self.transmittance


@dataclass(frozen=True)
class RenderConfig:
    floor: float = DEFAULT_FLOOR
    near: float = NEAR_PLANE
    stop_transmittance: float = STOP_TRANSMITTANCE
    tile: int = TILE

    @classmethod
    def from_config(cls, config: configparser.ConfigParser = CONFIG) -> "RenderConfig":
        sect = config["render"]
        return cls(
            floor=sect.getfloat("floor"),
            near=sect.getfloat("near"),
            stop_transmittance=sect.getfloat("stop_transmittance"),
            tile=sect.getint("tile"),
        )


# projection {{{


def _project(
    means: np.ndarray,
    rotations: np.ndarray,
    scales: np.ndarray,
    cam: CameraView,
    near: float,
    cull_footprint: bool,
) -> ScreenGaussians:
    """EWA projection: cov2d = J W Sigma W^T J^T + 0.3 I."""
    rot = cam.R
    cam_pts = means @ rot.T + cam.t
    depth = cam_pts[:, 2]
    keep = np.flatnonzero(depth > near)

    x, y, z = cam_pts[keep].T
    jac = np.zeros((len(keep), 2, 3))
    jac[:, 0, 0] = cam.fx / z
    jac[:, 0, 2] = -cam.fx * x / z**2
    jac[:, 1, 1] = cam.fy / z
    jac[:, 1, 2] = -cam.fy * y / z**2

    jw = jac @ rot
    cov3d = covariances(rotations[keep], scales[keep])
    cov2d = jw @ cov3d @ np.swapaxes(jw, 1, 2)
    cov2d[:, 0, 0] += LOW_PASS
    cov2d[:, 1, 1] += LOW_PASS

    mean2d = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=1)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    # bounding box of the ellipse d^T cov^-1 d <= 9
    half_extent = 3.0 * np.sqrt(np.stack([a, c], axis=1))

    screen = ScreenGaussians(keep, mean2d, cov2d, conic, depth[keep], half_extent)

    if cull_footprint:
        lo = screen.mean2d - screen.half_extent
        hi = screen.mean2d + screen.half_extent
        inside = (
            (hi[:, 0] >= 0)
            & (lo[:, 0] <= cam.width - 1)
            & (hi[:, 1] >= 0)
            & (lo[:, 1] <= cam.height - 1)
        )
        screen = screen.take(np.flatnonzero(inside))

    order = np.argsort(screen.depth, kind="stable")
    return screen.take(order)


def project_scene(
    scene: GaussianScene,
    cam: CameraView,
    near: float = NEAR_PLANE,
) -> ScreenGaussians:
    return _project(scene.means, scene.rotations, scene.scales, cam, near, True)


def project_gaussian(
    g: Gaussian,
    cam: CameraView,
    near: float = NEAR_PLANE,
) -> Optional[ScreenGaussian]:
    """None when behind the near plane or when the 3-sigma footprint misses
    the image."""
    screen = _project(g.mean[None], g.rotation[None], g.scale[None], cam, near, True)
    if not len(screen):
        return None
    return ScreenGaussian(
        source_index=0,
        mean2d=screen.mean2d[0],
        cov2d=screen.cov2d[0],
        depth=float(screen.depth[0]),
    )


# }}}

# compositing {{{


def _composite_pixels(
    px: np.ndarray,
    py: np.ndarray,
    screen: ScreenGaussians,
    opacities: np.ndarray,
    stop: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Weights (P, G) of depth-sorted `screen` at pixel centers (px, py), and
    the final transmittance (P,).
    """
    dx = px[:, None] - screen.mean2d[None, :, 0]
    dy = py[:, None] - screen.mean2d[None, :, 1]
    ca, cb, cc = screen.conic.T
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy

    inside = power >= MIN_POWER
    alpha = np.where(
        inside,
        np.minimum(ALPHA_MAX, opacities[None, :] * np.exp(np.minimum(power, 0.0))),
        0.0,
    )

    t_after = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.empty_like(t_after)
    t_before[:, 0] = 1.0
    t_before[:, 1:] = t_after[:, :-1]

    # a contribution that would push transmittance below `stop` ends the ray
    # and is itself dropped; t_after is non-increasing so this is a prefix
    composited = t_after >= stop
    weights = np.where(composited, alpha * t_before, 0.0)

    n_comp = composited.sum(axis=1)
    final_t = np.ones(len(px))
    has = n_comp > 0
    final_t[has] = t_after[np.flatnonzero(has), n_comp[has] - 1]
    return weights, final_t


def _validate(scene: GaussianScene, floor: float) -> None:
    if not len(scene):
        raise DataError("Cannot rasterize an empty scene")
    if floor <= 0:
        raise DataError(f"Contribution floor must be positive, got {floor}")


def _emit(
    weights: np.ndarray,
    screen: ScreenGaussians,
    rows: np.ndarray,
    cols: np.ndarray,
    floor: float,
    out: list,
) -> None:
    p_idx, g_idx = np.nonzero(weights >= floor)
    out.append(
        (
            screen.source_index[g_idx],
            rows[p_idx],
            cols[p_idx],
            weights[p_idx, g_idx],
        )
    )


def _gather(parts: list, width: int) -> Contributions:
    if not parts:
        empty = np.zeros(0, dtype=np.int64)
        return Contributions(empty, empty, empty, np.zeros(0))
    g, r, c, w = (np.concatenate(col) for col in zip(*parts))
    # row-major pixels, front to back within a pixel
    order = np.argsort(r * width + c, kind="stable")
    return Contributions(
        g[order].astype(np.int64),
        r[order].astype(np.int64),
        c[order].astype(np.int64),
        w[order],
    )


def rasterize(
    scene: GaussianScene,
    cam: CameraView,
    floor: float = DEFAULT_FLOOR,
    with_features: bool = False,
    stop_transmittance: float = STOP_TRANSMITTANCE,
    near: float = NEAR_PLANE,
    tile: int = TILE,
) -> RenderOutput:
    """Tiled front-to-back compositing.

    Contributions with weight >= `floor` are emitted; color (and features, if
    requested) always use every contributor.
    """
    _validate(scene, floor)
    screen = project_scene(scene, cam, near)

    height, width = cam.height, cam.width
    color = np.zeros((height, width, 3))
    feats = np.zeros((height, width, scene.feature_dim)) if with_features else None
    trans = np.ones((height, width))
    parts: list = []

    lo = screen.mean2d - screen.half_extent
    hi = screen.mean2d + screen.half_extent
    sorted_colors = scene.colors[screen.source_index]
    sorted_opac = scene.opacities[screen.source_index]
    sorted_feats = scene.features[screen.source_index] if with_features else None

    for y0 in range(0, height, tile):
        y1 = min(y0 + tile, height) - 1
        for x0 in range(0, width, tile):
            x1 = min(x0 + tile, width) - 1
            hit = np.flatnonzero(
                (hi[:, 0] >= x0) & (lo[:, 0] <= x1) & (hi[:, 1] >= y0) & (lo[:, 1] <= y1)
            )
            if not len(hit):
                continue

            rows, cols = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
            rows, cols = rows.ravel(), cols.ravel()
            local = screen.take(hit)
            weights, final_t = _composite_pixels(
                cols.astype(np.float64),
                rows.astype(np.float64),
                local,
                sorted_opac[hit],
                stop_transmittance,
            )
            color[rows, cols] = weights @ sorted_colors[hit]
            if feats is not None:
                feats[rows, cols] = weights @ sorted_feats[hit]
            trans[rows, cols] = final_t
            _emit(weights, local, rows, cols, floor, parts)

    return RenderOutput(color, _gather(parts, width), trans, feats)


def rasterize_naive(
    scene: GaussianScene,
    cam: CameraView,
    floor: float = DEFAULT_FLOOR,
    with_features: bool = False,
    stop_transmittance: float = STOP_TRANSMITTANCE,
    near: float = NEAR_PLANE,
) -> RenderOutput:
    """Reference renderer: every ray visits every Gaussian in front of the
    near plane. No tiles, no footprint culling. Quadratic; small inputs only.
    """
    _validate(scene, floor)
    screen = _project(scene.means, scene.rotations, scene.scales, cam, near, False)

    rows, cols = np.mgrid[0 : cam.height, 0 : cam.width]
    rows, cols = rows.ravel(), cols.ravel()
    weights, final_t = _composite_pixels(
        cols.astype(np.float64),
        rows.astype(np.float64),
        screen,
        scene.opacities[screen.source_index],
        stop_transmittance,
    )

    shape = (cam.height, cam.width)
    color = (weights @ scene.colors[screen.source_index]).reshape(*shape, 3)
    feats = None
    if with_features:
        feats = (weights @ scene.features[screen.source_index]).reshape(*shape, -1)

    parts: list = []
    _emit(weights, screen, rows, cols, floor, parts)
    return RenderOutput(color, _gather(parts, cam.width), final_t.reshape(shape), feats)


def render_feature_image(
    scene: GaussianScene,
    cam: CameraView,
    **kwargs,
) -> np.ndarray:
    """(H, W, D) image of sum_n w_n z_n, with the weights of `rasterize`."""
    if not scene.feature_dim:
        raise DataError("Scene carries no features (feature_dim = 0)")
    return rasterize(scene, cam, with_features=True, **kwargs).features


# }}}


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)
