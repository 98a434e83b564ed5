"""Localization map construction from composition weights.

Pipeline: (optional split) -> aggregate_weights -> prefilter -> score
(-> aggregate_child_scores) -> sample_gaussians -> register_features.
"""

import configparser
import multiprocessing
import time
from collections.abc import Mapping
from collections.abc import Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from functools import partial
from typing import Iterator
from typing import Optional

import numpy as np
import psutil
from scipy.spatial import cKDTree
from scipy.special import softmax

from gsloc.config import CONFIG
from gsloc.core import LOGGER
from gsloc.core import DataError
from gsloc.core import DomainError
from gsloc.render.rasterizer import STOP_TRANSMITTANCE
from gsloc.render.rasterizer import rasterize
from gsloc.scene.core import CameraView
from gsloc.scene.core import GaussianScene
from gsloc.split.splitter import DEFAULT_BETA
from gsloc.split.splitter import split_scene

MAX_ANCHORS = 16384
MAP_MODES = ["weights", "projection_average"]


# types {{{


@dataclass(frozen=True)
class WeightEntry:
    view_id: int
    pixel: tuple[int, int]  # (row, col)
    weight: float


@dataclass(frozen=True)
class InformativeWeightSet:
    """The strongest above-threshold weight of one Gaussian in every view
    where it has one, sorted by view id."""

    gaussian_index: int
    entries: tuple[WeightEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries])

    @property
    def view_ids(self) -> list[int]:
        return [e.view_id for e in self.entries]

    def reindexed(self, gaussian_index: int) -> "InformativeWeightSet":
        return InformativeWeightSet(gaussian_index, self.entries)


@dataclass(frozen=True)
class LocalRegion:
    anchor_index: int
    member_indices: tuple[int, ...]


@dataclass(frozen=True)
class MapMeta:
    tau: float = 0.1
    beta: Optional[float] = None
    seed: int = 0
    anchors: int = 0
    k: int = 8
    mode: str = "weights"
    upsampled: bool = False
    scene_count: int = 0
    retained_count: int = 0
    point_count: int = 0
    extent_min: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extent_max: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class LocalizationMap:
    positions: np.ndarray  # (M, 3)
    descriptors: np.ndarray  # (M, D)
    meta: MapMeta = field(default_factory=MapMeta)

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        descriptors = np.asarray(self.descriptors, dtype=np.float64)
        descriptors = descriptors.reshape(len(positions), -1)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "descriptors", descriptors)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def feature_dim(self) -> int:
        return self.descriptors.shape[1]

    @property
    def points(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return zip(self.positions, self.descriptors)

    def with_meta(self, **changes) -> "LocalizationMap":
        return LocalizationMap(self.positions, self.descriptors, replace(self.meta, **changes))


@dataclass(frozen=True)
class MapConfig:
    tau: float = 0.1
    anchors: int = 0  # 0 = min(16384, retained)
    k: int = 8
    split: bool = False
    beta: float = DEFAULT_BETA
    seed: int = 0
    mode: str = "weights"
    upsample: bool = False
    upsample_k: int = 3
    workers: int = 1
    stop_transmittance: float = STOP_TRANSMITTANCE

    @classmethod
    def from_config(cls, config: configparser.ConfigParser = CONFIG) -> "MapConfig":
        sect = config["map"]
        render = config["render"]
        mode = sect.get("mode")
        if mode not in MAP_MODES:
            raise DataError(f"Unknown map mode '{mode}'; expected one of {MAP_MODES}")
        return cls(
            tau=sect.getfloat("tau"),
            anchors=sect.getint("anchors"),
            k=sect.getint("k"),
            split=sect.getboolean("split"),
            beta=sect.getfloat("beta"),
            seed=sect.getint("seed"),
            mode=mode,
            upsample=sect.getboolean("upsample"),
            upsample_k=sect.getint("upsample_k"),
            workers=sect.getint("workers"),
            stop_transmittance=render.getfloat("stop_transmittance"),
        )


# }}}


def resolve_workers(workers: int) -> int:
    if workers > 0:
        return workers
    return psutil.cpu_count(logical=False) or 1


@contextmanager
def stage(name: str, timings: dict[str, float]):
    start = time.perf_counter()
    yield
    timings[name] = (time.perf_counter() - start) * 1000
    LOGGER.info("%-12s %9.1f ms", name, timings[name])


# weight aggregation {{{


def _view_maxima(
    cam: CameraView,
    scene: GaussianScene,
    tau: float,
    stop_transmittance: float,
) -> tuple[np.ndarray, ...]:
    """(gaussian, view_id, row, col, weight) of every Gaussian's strongest
    contribution >= tau in one view; ties go to the first pixel in row-major
    order."""
    contrib = rasterize(scene, cam, floor=tau, stop_transmittance=stop_transmittance).contributions
    if not len(contrib):
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, empty, np.zeros(0)

    flat = contrib.row * cam.width + contrib.col
    # last key is the primary one
    order = np.lexsort((flat, -contrib.weight, contrib.gaussian_index))
    _, first = np.unique(contrib.gaussian_index[order], return_index=True)
    best = order[first]
    return (
        contrib.gaussian_index[best],
        np.full(len(best), cam.view_id, dtype=np.int64),
        contrib.row[best],
        contrib.col[best],
        contrib.weight[best],
    )


def aggregate_weights(
    scene: GaussianScene,
    cameras: Sequence[CameraView],
    tau: float,
    workers: int = 1,
    stop_transmittance: float = STOP_TRANSMITTANCE,
) -> list[InformativeWeightSet]:
    """Informative weight sets of all Gaussians with at least one weight >= tau,
    sorted by Gaussian index.

    Views may be rendered in parallel; the merge sorts by (Gaussian, view id),
    so the result does not depend on camera order or worker count.
    """
    if not 0 < tau < 1:
        raise DomainError(f"tau = {tau} must lie in (0, 1)")

    func = partial(_view_maxima, scene=scene, tau=tau, stop_transmittance=stop_transmittance)
    workers = min(resolve_workers(workers), max(len(cameras), 1))
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            per_view = pool.map(func, cameras)
    else:
        per_view = list(map(func, cameras))

    if not per_view:
        return []
    gidx, views, rows, cols, weights = (np.concatenate(c) for c in zip(*per_view))
    order = np.lexsort((views, gidx))
    gidx, views, rows, cols, weights = (a[order] for a in (gidx, views, rows, cols, weights))

    uniq, starts = np.unique(gidx, return_index=True)
    bounds = list(starts[1:]) + [len(gidx)]
    return [
        InformativeWeightSet(
            int(g),
            tuple(
                WeightEntry(int(views[i]), (int(rows[i]), int(cols[i])), float(weights[i]))
                for i in range(lo, hi)
            ),
        )
        for g, lo, hi in zip(uniq, starts, bounds)
    ]


def prefilter(
    scene: GaussianScene,
    weightsets: Sequence[InformativeWeightSet],
) -> tuple[GaussianScene, dict[int, int]]:
    """Keep only the Gaussians with a non-empty weight set.

    Returns the reduced scene and the map old index -> new index.
    """
    kept = sorted(ws.gaussian_index for ws in weightsets if len(ws))
    if not kept:
        raise DataError("No Gaussian reaches the weight threshold in any view; lower tau")
    remap = {old: new for new, old in enumerate(kept)}
    return scene.subset(kept), remap


def remap_weightsets(
    weightsets: Sequence[InformativeWeightSet],
    remap: Mapping[int, int],
) -> list[InformativeWeightSet]:
    return [
        ws.reindexed(remap[ws.gaussian_index])
        for ws in weightsets
        if ws.gaussian_index in remap
    ]


# }}}

# scoring {{{


def score(ws: InformativeWeightSet) -> float:
    if not len(ws):
        raise DataError(f"Gaussian {ws.gaussian_index} has an empty weight set")
    return float(np.mean(ws.weights))


def aggregate_child_scores(minus: float, center: float, plus: float) -> float:
    return (minus + center + plus) / 3.0


def parent_scores(
    parent_ids: np.ndarray,
    child_scores: np.ndarray,
    parent_count: int,
) -> np.ndarray:
    """Vectorized `aggregate_child_scores`; absent children count as 0."""
    return np.bincount(parent_ids, weights=child_scores, minlength=parent_count) / 3.0


# }}}

# sampling {{{


def _region_members(positions: np.ndarray, anchors: np.ndarray, k: int) -> np.ndarray:
    """(A, m) sorted member indices of each anchor's region, m = min(k+1, n)."""
    m = min(k + 1, len(positions))
    _, idx = cKDTree(positions).query(positions[anchors], k=m)
    idx = np.asarray(idx, dtype=np.int64).reshape(len(anchors), m)
    # coincident points can push the anchor itself out of its neighbour list
    missing = ~(idx == anchors[:, None]).any(axis=1)
    idx[missing, -1] = anchors[missing]
    return np.sort(idx, axis=1)


def local_regions(positions: np.ndarray, anchors, k: int) -> list[LocalRegion]:
    anchors = np.asarray(anchors, dtype=np.int64)
    members = _region_members(np.asarray(positions, dtype=np.float64), anchors, k)
    return [LocalRegion(int(a), tuple(int(i) for i in row)) for a, row in zip(anchors, members)]


def sample_gaussians(
    scene: GaussianScene,
    scores: np.ndarray,
    anchor_count: int,
    k: int,
    seed: int,
    split_mode: bool = False,
    parent_means: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sorted indices into `scene` of the Gaussians that survive sampling.

    Unsplit: `scores[i]` belongs to scene Gaussian i. Split mode: `scene`
    holds children, `scores[p]` and `parent_means[p]` belong to parent p, and
    every child in `scene` of a winning parent is returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not len(scores):
        raise DataError("Cannot sample without scores")
    if k < 1:
        raise DataError(f"k = {k} must be at least 1")

    if split_mode:
        if parent_means is None:
            raise DataError("Split-mode sampling needs the parent centers")
        population = np.unique(scene.parent_ids)
        positions = np.asarray(parent_means)[population]
    else:
        population = np.arange(len(scene))
        positions = scene.means
    local_scores = scores[population]

    if anchor_count > len(population):
        LOGGER.warning(
            "Clamped anchor count %d to the %d candidates",
            anchor_count,
            len(population),
        )
        anchor_count = len(population)

    rng = np.random.default_rng(seed)
    anchors = np.sort(rng.choice(len(population), size=anchor_count, replace=False))
    members = _region_members(positions, anchors, k)

    # members are sorted, so argmax picks the lowest index among equal scores
    winners = members[np.arange(len(members)), np.argmax(local_scores[members], axis=1)]
    winners = population[np.unique(winners)]

    if split_mode:
        return np.flatnonzero(np.isin(scene.parent_ids, winners))
    return winners


# }}}

# registration {{{


def register_features(
    scene: GaussianScene,
    selected,
    weightsets: Sequence[InformativeWeightSet],
    feature_images: Mapping[int, np.ndarray],
) -> LocalizationMap:
    """One descriptor per selected Gaussian: the softmax(weight)-weighted sum
    of its unit-normalized pixel features."""
    by_index = {ws.gaussian_index: ws for ws in weightsets}
    dims = {img.shape[-1] for img in feature_images.values()}
    if len(dims) > 1:
        raise DataError(f"Feature images disagree on channel count: {sorted(dims)}")
    dim = dims.pop() if dims else 0

    selected = np.asarray(selected, dtype=np.int64)
    descriptors = np.zeros((len(selected), dim))
    zero_norm = 0
    for row, idx in enumerate(selected):
        ws = by_index.get(int(idx))
        if ws is None or not len(ws):
            raise DataError(f"Selected Gaussian {idx} has an empty weight set")

        feats = np.zeros((len(ws), dim))
        for j, entry in enumerate(ws.entries):
            if entry.view_id not in feature_images:
                raise DataError(f"No feature image for view {entry.view_id}")
            feats[j] = feature_images[entry.view_id][entry.pixel]

        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        zero = norms[:, 0] == 0
        zero_norm += int(zero.sum())
        unit = np.divide(feats, norms, out=np.zeros_like(feats), where=~zero[:, None])
        descriptors[row] = softmax(ws.weights) @ unit

    if zero_norm:
        LOGGER.warning("%d zero-norm pixel features contributed nothing", zero_norm)

    return LocalizationMap(scene.means[selected], descriptors)


# }}}


def build_map(
    scene: GaussianScene,
    cameras: Sequence[CameraView],
    feature_images: Mapping[int, np.ndarray],
    config: MapConfig = MapConfig(),
) -> LocalizationMap:
    """Run the full mapping pipeline; deterministic given `config.seed`."""
    from gsloc.mapper.baseline import nn_upsample
    from gsloc.mapper.baseline import projection_average

    if config.mode not in MAP_MODES:
        raise DataError(f"Unknown map mode '{config.mode}'; expected one of {MAP_MODES}")
    if not len(scene):
        raise DataError("Cannot build a map from an empty scene")

    timings: dict[str, float] = {}
    original = scene
    if config.split:
        with stage("split", timings):
            scene = split_scene(scene, config.beta)

    with stage("aggregate", timings):
        weightsets = aggregate_weights(
            scene,
            cameras,
            config.tau,
            workers=config.workers,
            stop_transmittance=config.stop_transmittance,
        )

    with stage("prefilter", timings):
        filtered, remap = prefilter(scene, weightsets)
        weightsets = remap_weightsets(weightsets, remap)
    LOGGER.info("Retained %d of %d Gaussians at tau = %g", len(filtered), len(scene), config.tau)

    with stage("sample", timings):
        child_scores = np.array([score(ws) for ws in weightsets])
        if config.split:
            scores = parent_scores(filtered.parent_ids, child_scores, len(original))
            candidates = len(np.unique(filtered.parent_ids))
        else:
            scores = child_scores
            candidates = len(filtered)

        anchors = config.anchors or MAX_ANCHORS
        if config.split:
            anchors *= 2
        if not config.anchors:
            anchors = min(anchors, candidates)
        selected = sample_gaussians(
            filtered,
            scores,
            anchors,
            config.k,
            config.seed,
            split_mode=config.split,
            parent_means=original.means if config.split else None,
        )

    with stage("register", timings):
        if config.mode == "projection_average":
            lmap = projection_average(filtered, selected, cameras, feature_images)
        else:
            lmap = register_features(filtered, selected, weightsets, feature_images)
        if config.upsample:
            lmap = nn_upsample(lmap, config.upsample_k)

    lo, hi = scene.extent
    return lmap.with_meta(
        tau=config.tau,
        beta=config.beta if config.split else None,
        seed=config.seed,
        anchors=min(anchors, candidates),
        k=config.k,
        mode=config.mode,
        upsampled=config.upsample,
        scene_count=len(scene),
        retained_count=len(filtered),
        point_count=len(lmap),
        extent_min=tuple(float(x) for x in lo),
        extent_max=tuple(float(x) for x in hi),
    )
