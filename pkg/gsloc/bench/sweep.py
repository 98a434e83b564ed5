"""Parameter sweeps: contribution threshold, split offset and map size."""

import os
from dataclasses import replace

import matplotlib
import numpy as np
import pandas as pd

from gsloc.bench.evaluate import EvalConfig
from gsloc.bench.evaluate import EvalReport
from gsloc.bench.evaluate import run_eval
from gsloc.bench.evaluate import write_report
from gsloc.bench.synth import SyntheticScene
from gsloc.core import LOGGER
from gsloc.core import DataError
from gsloc.core import GslocError
from gsloc.mapper.core import MapConfig
from gsloc.mapper.core import build_map

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SWEEP_PARAMS = ["tau", "beta", "map_size"]


def _arms(param: str, value: float, base: MapConfig) -> list[tuple[str, MapConfig]]:
    match param:
        case "tau":
            return [("", replace(base, tau=value))]
        case "beta":
            return [("", replace(base, split=True, beta=value))]
        case "map_size":
            # split mode doubles anchors and keeps up to three children each
            n = int(value)
            return [
                ("unsplit", replace(base, split=False, anchors=n)),
                ("split", replace(base, split=True, anchors=max(n // 6, 1))),
            ]
    raise DataError(f"Unknown sweep parameter '{param}'; expected one of {SWEEP_PARAMS}")


def sweep(
    param: str,
    values: list[float],
    synth: SyntheticScene,
    map_cfg: MapConfig = MapConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    out_dir: str | None = None,
) -> tuple[pd.DataFrame, dict[str, EvalReport]]:
    """One evaluation per value (two for map_size). A value outside the
    parameter's domain becomes an error row and the sweep goes on."""
    if param not in SWEEP_PARAMS:
        raise DataError(f"Unknown sweep parameter '{param}'; expected one of {SWEEP_PARAMS}")
    if not values:
        raise DataError("Empty sweep")

    rows = []
    reports = {}
    for value in values:
        for arm, cfg in _arms(param, value, map_cfg):
            label = f"{param}={value:g}" + (f"-{arm}" if arm else "")
            row = {"param": param, "value": value, "arm": arm}
            try:
                lmap = build_map(synth.scene, synth.cameras, synth.features, cfg)
                report = run_eval(lmap, synth.queries, synth.query_features, eval_cfg)
            except GslocError as e:
                LOGGER.warning("%s: %s", label, e)
                rows.append(row | {"status": "error", "error": str(e)})
                continue

            reports[label] = report
            rows.append(
                row | {"status": "ok", "error": "", "points": len(lmap)} | report.summary()
            )
            if out_dir:
                write_report(report, os.path.join(out_dir, label))

    frame = pd.DataFrame(rows)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        frame.to_csv(os.path.join(out_dir, "sweep.csv"), index=False, float_format="%.9g")
    return frame, reports


def plot_sweep(frame: pd.DataFrame, path: str) -> None:
    """Median translation and rotation error against the swept value, one
    line per arm."""
    ok = frame[frame.status == "ok"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, col in zip(axes, ["median_translation_cm", "median_rotation_deg"]):
        for arm, group in ok.groupby("arm", sort=True):
            vals = group[col].to_numpy()
            vals = np.where(np.isfinite(vals), vals, np.nan)
            ax.plot(group.value, vals, marker="o", label=arm or None)
        ax.set_xlabel(frame.param.iloc[0] if len(frame) else "")
        ax.set_ylabel(col.replace("_", " "))
        ax.grid(alpha=0.3)
        if ok.arm.astype(bool).any():
            ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
