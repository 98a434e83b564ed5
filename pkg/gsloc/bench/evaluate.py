"""End-to-end evaluation over query views, reports and diagnostics."""

import configparser
import multiprocessing
import os
from collections.abc import Mapping
from collections.abc import Sequence
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from functools import partial

import matplotlib
import numpy as np
import pandas as pd
from tqdm import tqdm

from gsloc.config import CONFIG
from gsloc.core import DataError
from gsloc.localizer.core import pose_error
from gsloc.localizer.pnp import PRESETS
from gsloc.localizer.pnp import LocalizeConfig
from gsloc.localizer.pnp import localize
from gsloc.mapper.core import LocalizationMap
from gsloc.mapper.core import MapConfig
from gsloc.mapper.core import MapMeta
from gsloc.mapper.core import build_map
from gsloc.mapper.core import resolve_workers
from gsloc.scene.core import CameraView

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# (cm, deg)
RECALL_THRESHOLDS = [(25.0, 2.0), (50.0, 5.0)]

# columns that must not take part in report comparisons
TIMING_COLUMNS = ["runtime_ms"]


@dataclass(frozen=True)
class EvalConfig:
    localize: LocalizeConfig = field(default_factory=LocalizeConfig)
    workers: int = 1

    @classmethod
    def from_config(cls, config: configparser.ConfigParser = CONFIG) -> "EvalConfig":
        return cls(
            localize=LocalizeConfig.from_config(config),
            workers=config["localize"].getint("workers"),
        )


@dataclass(frozen=True)
class QueryResult:
    query_id: int
    translation_cm: float
    rotation_deg: float
    inliers: int
    many_to_one: int
    iterations: int
    success: bool
    runtime_ms: float


@dataclass(frozen=True)
class EvalReport:
    results: list[QueryResult]
    meta: MapMeta = field(default_factory=MapMeta)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.results])

    @property
    def median_translation_cm(self) -> float:
        return float(np.median([r.translation_cm for r in self.results]))

    @property
    def median_rotation_deg(self) -> float:
        return float(np.median([r.rotation_deg for r in self.results]))

    def recall(self, cm: float, deg: float) -> float:
        hits = [r.translation_cm <= cm and r.rotation_deg <= deg for r in self.results]
        return float(np.mean(hits))

    def summary(self) -> dict[str, float]:
        df = self.frame()
        out = {
            "queries": len(df),
            "localized": int(df.success.sum()),
            "median_translation_cm": self.median_translation_cm,
            "median_rotation_deg": self.median_rotation_deg,
            "median_inliers": float(df.inliers.median()),
            "median_many_to_one": float(df.many_to_one.median()),
        }
        for cm, deg in RECALL_THRESHOLDS:
            out[f"recall_{cm:g}cm_{deg:g}deg"] = self.recall(cm, deg)
        return out


def _evaluate_query(
    item: tuple[CameraView, np.ndarray],
    lmap: LocalizationMap,
    cfg: LocalizeConfig,
) -> QueryResult:
    cam, image = item
    est = localize(image, lmap, cam, cfg)
    if est.success:
        t_cm, r_deg = pose_error(est, cam)
    else:
        t_cm, r_deg = np.inf, np.inf
    return QueryResult(
        query_id=cam.view_id,
        translation_cm=t_cm,
        rotation_deg=r_deg,
        inliers=est.inlier_count,
        many_to_one=est.many_to_one_count,
        iterations=est.iterations_run,
        success=est.success,
        runtime_ms=est.runtime_ms,
    )


def run_eval(
    lmap: LocalizationMap,
    queries: Sequence[CameraView],
    query_features: Mapping[int, np.ndarray],
    cfg: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Localize every query against `lmap` and compare with its ground-truth
    pose. Failed queries count with infinite error."""
    if not queries:
        raise DataError("No queries to evaluate")
    queries = sorted(queries, key=lambda c: c.view_id)
    missing = [c.view_id for c in queries if c.view_id not in query_features]
    if missing:
        raise DataError(f"No query features for views {missing}")

    items = [(c, query_features[c.view_id]) for c in queries]
    func = partial(_evaluate_query, lmap=lmap, cfg=cfg.localize)
    workers = min(resolve_workers(cfg.workers), len(items))
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            results = pool.map(func, items)
    else:
        results = [func(item) for item in tqdm(items, desc="queries", disable=None)]
    return EvalReport(results, lmap.meta)


# reports {{{


def plot_errors(report: EvalReport, path: str) -> None:
    """Cumulative translation/rotation error curves."""
    df = report.frame()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, col, unit in zip(axes, ["translation_cm", "rotation_deg"], ["cm", "deg"]):
        vals = np.sort(df[col].to_numpy())
        frac = np.arange(1, len(vals) + 1) / len(vals)
        ax.step(vals[np.isfinite(vals)], frac[np.isfinite(vals)], where="post")
        ax.set_xlabel(f"error ({unit})")
        ax.set_ylabel("fraction of queries")
        ax.set_ylim(0, 1)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_report(report: EvalReport, directory: str, plots: bool = False) -> None:
    """report.csv and summary.ini are deterministic; runtimes go to
    timing.csv."""
    os.makedirs(directory, exist_ok=True)
    df = report.frame()
    df.drop(columns=TIMING_COLUMNS).to_csv(
        os.path.join(directory, "report.csv"),
        index=False,
        float_format="%.9g",
    )
    df[["query_id", *TIMING_COLUMNS]].to_csv(
        os.path.join(directory, "timing.csv"),
        index=False,
        float_format="%.3f",
    )

    parser = configparser.ConfigParser()
    parser["summary"] = {key: f"{val:.9g}" for key, val in report.summary().items()}
    parser["map"] = {key: str(val) for key, val in asdict(report.meta).items()}
    with open(os.path.join(directory, "summary.ini"), "w", encoding="utf-8") as f:
        parser.write(f)

    if plots:
        plot_errors(report, os.path.join(directory, "errors.png"))


# }}}

# diagnostics {{{

VARIANTS = {
    "weights": {},
    "weights_split": {"split": True},
    "projection_average": {"mode": "projection_average"},
    "nn_upsample": {"upsample": True},
}


def diagnose(
    synth,
    map_cfg: MapConfig = MapConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
) -> pd.DataFrame:
    """Many-to-one matches, final inliers, error and runtime for every map
    variant under both RANSAC presets. Matching is one-way, so a map point may
    be matched by several keypoints."""
    rows = []
    for variant, changes in VARIANTS.items():
        lmap = build_map(synth.scene, synth.cameras, synth.features, replace(map_cfg, **changes))
        for preset in PRESETS:
            loc = replace(eval_cfg.localize.with_preset(preset), mutual=False)
            cfg = replace(eval_cfg, localize=loc)
            report = run_eval(lmap, synth.queries, synth.query_features, cfg)
            df = report.frame()
            rows.append(
                {
                    "variant": variant,
                    "preset": preset,
                    "points": len(lmap),
                    "many_to_one": float(df.many_to_one.median()),
                    "inliers": float(df.inliers.median()),
                    "translation_cm": report.median_translation_cm,
                    "rotation_deg": report.median_rotation_deg,
                    "runtime_ms": float(df.runtime_ms.median()),
                }
            )
    return pd.DataFrame(rows)


# }}}
