"""Command-line entry point.

Every flag can also be set in an INI file passed with --config (same section
and key names as gsloc/config); flags given on the command line win.

Exit codes: 0 success, 1 usage, 2 bad input data, 3 localization failure.
"""

import argparse
import configparser
import os
import sys
from typing import Optional

from termcolor import colored

from gsloc.bench.evaluate import EvalConfig
from gsloc.bench.evaluate import diagnose
from gsloc.bench.evaluate import run_eval
from gsloc.bench.evaluate import write_report
from gsloc.bench.synth import SceneSpec
from gsloc.bench.synth import generate_synthetic_scene
from gsloc.bench.synth import load_scene_dir
from gsloc.bench.synth import save_scene_dir
from gsloc.bench.sweep import SWEEP_PARAMS
from gsloc.bench.sweep import plot_sweep
from gsloc.bench.sweep import sweep
from gsloc.config import apply_overrides
from gsloc.config import load_config
from gsloc.config import parse_floats
from gsloc.core import LOGGER
from gsloc.core import DataError
from gsloc.core import GslocError
from gsloc.core import LocalizationError
from gsloc.core import eprint
from gsloc.core import lprint
from gsloc.core import setup_logging
from gsloc.localizer.pnp import PRESETS
from gsloc.localizer.pnp import LocalizeConfig
from gsloc.localizer.pnp import localize
from gsloc.localizer.pnp import save_pose
from gsloc.mapper.core import MAP_MODES
from gsloc.mapper.core import MapConfig
from gsloc.mapper.core import build_map
from gsloc.mapper.io import load_map
from gsloc.mapper.io import save_map
from gsloc.render.io import feature_path
from gsloc.render.io import read_feature_dir
from gsloc.render.io import read_feature_image
from gsloc.render.io import write_feature_image
from gsloc.render.io import write_png
from gsloc.render.rasterizer import RenderConfig
from gsloc.render.rasterizer import rasterize
from gsloc.scene.io import load_cameras
from gsloc.scene.io import load_splat_ply
from gsloc.scene.io import save_splat_ply
from gsloc.split.splitter import split_scene

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_LOCALIZATION = 3


class ArgumentParser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; 2 is reserved for bad data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        eprint(f"{self.prog}: error: {message}")
        sys.exit(EXIT_USAGE)


def parse_args(argv: Optional[list[str]] = None) -> argparse.Namespace:
    parser = ArgumentParser(prog="gsloc")
    parser.add_argument("--config", help="INI file overriding the defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    synth = subparsers.add_parser("synth", help="generate a synthetic scene dir")
    synth.add_argument("--spec", help="INI file with a [synth] section")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--noise", type=float)
    synth.add_argument("--out", required=True)

    split = subparsers.add_parser("split", help="split every Gaussian in three")
    split.add_argument("--input", required=True)
    split.add_argument("--beta", type=float)
    split.add_argument("--out", required=True)

    render = subparsers.add_parser("render", help="render color (and feature) images")
    render.add_argument("--scene", required=True)
    render.add_argument("--camera", required=True, help="camera INI file")
    render.add_argument("--view", type=int, help="only this view id")
    render.add_argument("--features", action="store_true", help="also write GSFM files")
    render.add_argument("--out", required=True, help="output directory")

    build = subparsers.add_parser("build-map", help="build a localization map")
    build.add_argument("--scene", required=True)
    build.add_argument("--cameras", required=True)
    build.add_argument("--features", required=True, help="directory of GSFM files")
    build.add_argument("--tau", type=float)
    build.add_argument("--anchors", type=int)
    build.add_argument("--k", type=int)
    build.add_argument("--split", action="store_true", default=None)
    build.add_argument("--beta", type=float)
    build.add_argument("--seed", type=int)
    build.add_argument("--mode", choices=MAP_MODES)
    build.add_argument("--upsample", action="store_true", default=None)
    build.add_argument("--workers", type=int)
    build.add_argument("--out", required=True)

    loc = subparsers.add_parser("localize", help="estimate the pose of one query")
    loc.add_argument("--map", required=True)
    loc.add_argument("--query-features", required=True, help="GSFM file")
    loc.add_argument("--intrinsics", required=True, help="camera INI file")
    loc.add_argument("--view", type=int, help="camera to use (default: first)")
    loc.add_argument("--preset", choices=list(PRESETS))
    loc.add_argument("--out", required=True)

    ev = subparsers.add_parser("eval", help="localize all queries against a map")
    ev.add_argument("--map", required=True)
    ev.add_argument("--queries", required=True, help="query camera INI file")
    ev.add_argument("--query-features", help="default: query_features/ next to --queries")
    ev.add_argument("--preset", choices=list(PRESETS))
    ev.add_argument("--plots", action="store_true")
    ev.add_argument("--out", required=True)

    sw = subparsers.add_parser("sweep", help="evaluate over a range of one parameter")
    sw.add_argument("--scene-dir", required=True)
    sw.add_argument("--param", choices=SWEEP_PARAMS)
    sw.add_argument("--values", help="comma-separated")
    sw.add_argument("--plots", action="store_true")
    sw.add_argument("--out", required=True)

    diag = subparsers.add_parser("diagnose", help="many-to-one / inlier table")
    diag.add_argument("--scene-dir", required=True)
    diag.add_argument("--out", required=True, help="CSV file")

    return parser.parse_args(argv)


def _map_overrides(args: argparse.Namespace) -> dict:
    keys = ["tau", "anchors", "k", "split", "beta", "seed", "mode", "upsample", "workers"]
    return {key: getattr(args, key, None) for key in keys}


# subcommands {{{


def cmd_synth(args: argparse.Namespace, config: configparser.ConfigParser) -> None:
    if args.spec:
        if not os.path.isfile(args.spec):
            raise FileNotFoundError(args.spec)
        config.read(args.spec)
    apply_overrides(config, "synth", {"seed": args.seed, "noise": args.noise})
    spec = SceneSpec.from_config(config)
    synth = generate_synthetic_scene(spec)
    save_scene_dir(synth, args.out)
    lprint(
        f"{len(synth.scene)} Gaussians, {len(synth.cameras)} views,"
        f" {len(synth.queries)} queries -> {args.out}"
    )


def cmd_split(args: argparse.Namespace, config: configparser.ConfigParser) -> None:
    apply_overrides(config, "map", {"beta": args.beta})
    scene = load_splat_ply(args.input)
    out = split_scene(scene, config["map"].getfloat("beta"))
    save_splat_ply(out, args.out)
    lprint(f"{len(scene)} -> {len(out)} Gaussians")


def cmd_render(args: argparse.Namespace, config: configparser.ConfigParser) -> None:
    scene = load_splat_ply(args.scene)
    cameras = load_cameras(args.camera)
    if args.view is not None:
        cameras = [c for c in cameras if c.view_id == args.view]
        if not cameras:
            raise DataError(f"No camera with view_id {args.view}")
    render_cfg = RenderConfig.from_config(config)
    os.makedirs(args.out, exist_ok=True)
    for cam in cameras:
        out = rasterize(
            scene,
            cam,
            floor=render_cfg.floor,
            with_features=args.features and scene.feature_dim > 0,
            stop_transmittance=render_cfg.stop_transmittance,
            near=render_cfg.near,
            tile=render_cfg.tile,
        )
        write_png(out.color, os.path.join(args.out, f"{cam.view_id:04d}.png"))
        if out.features is not None:
            write_feature_image(out.features, feature_path(args.out, cam.view_id))
    lprint(f"Rendered {len(cameras)} views -> {args.out}")


def cmd_build_map(args: argparse.Namespace, config: configparser.ConfigParser) -> None:
    apply_overrides(config, "map", _map_overrides(args))
    lmap = build_map(
        load_splat_ply(args.scene),
        load_cameras(args.cameras),
        read_feature_dir(args.features),
        MapConfig.from_config(config),
    )
    save_map(lmap, args.out)
    lprint(f"{len(lmap)} map points -> {args.out}")


def cmd_localize(args: argparse.Namespace, config: configparser.ConfigParser) -> None:
    apply_overrides(config, "localize", {"preset": args.preset})
    cameras = load_cameras(args.intrinsics)
    if args.view is not None:
        cameras = [c for c in cameras if c.view_id == args.view]
    if not cameras:
        raise DataError(f"{args.intrinsics}: no matching camera")

    lmap = load_map(args.map)
    image = read_feature_image(args.query_features)
    est = localize(image, lmap, cameras[0], LocalizeConfig.from_config(config))
    save_pose(est, args.out)
    if not est.success:
        raise LocalizationError(f"No pose with enough inliers ({est.inlier_count})")
    print(colored(f"{est.inlier_count} inliers, {est.iterations_run} iterations", "green"))


def cmd_eval(args: argparse.Namespace, config: configparser.ConfigParser) -> None:
    apply_overrides(config, "localize", {"preset": args.preset})
    feature_dir = args.query_features or os.path.join(
        os.path.dirname(args.queries),
        "query_features",
    )
    report = run_eval(
        load_map(args.map),
        load_cameras(args.queries),
        read_feature_dir(feature_dir),
        EvalConfig.from_config(config),
    )
    write_report(report, args.out, plots=args.plots)
    _print_summary(report.summary())


def cmd_sweep(args: argparse.Namespace, config: configparser.ConfigParser) -> None:
    apply_overrides(config, "sweep", {"param": args.param, "values": args.values})
    param = config["sweep"].get("param")
    values = parse_floats(config["sweep"].get("values"))
    frame, _ = sweep(
        param,
        values,
        load_scene_dir(args.scene_dir),
        MapConfig.from_config(config),
        EvalConfig.from_config(config),
        out_dir=args.out,
    )
    if args.plots:
        plot_sweep(frame, os.path.join(args.out, f"sweep_{param}.png"))
    lprint(frame)


def cmd_diagnose(args: argparse.Namespace, config: configparser.ConfigParser) -> None:
    frame = diagnose(
        load_scene_dir(args.scene_dir),
        MapConfig.from_config(config),
        EvalConfig.from_config(config),
    )
    frame.to_csv(args.out, index=False, float_format="%.6g")
    lprint(frame)


# }}}


def _print_summary(summary: dict) -> None:
    ok = summary["localized"] == summary["queries"]
    for key, val in summary.items():
        print(f"{key:<24}", colored(f"{val:.6g}", "green" if ok else "red"))


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "render": cmd_render,
    "build-map": cmd_build_map,
    "localize": cmd_localize,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
}


def run(argv: Optional[list[str]] = None) -> int:
    args = parse_args(argv)
    setup_logging(args.verbose)
    try:
        config = load_config(args.config)
        COMMANDS[args.subcommand](args, config)
    except LocalizationError as e:
        eprint(colored(str(e), "red"))
        return EXIT_LOCALIZATION
    except (GslocError, FileNotFoundError, configparser.Error) as e:
        LOGGER.debug("", exc_info=True)
        eprint(colored(f"{type(e).__name__}: {e}", "red"))
        return EXIT_DATA
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
