import os

import numpy as np
import pytest

from gsloc.cli import EXIT_DATA
from gsloc.cli import EXIT_LOCALIZATION
from gsloc.cli import EXIT_USAGE
from gsloc.cli import run
from gsloc.localizer.pnp import load_pose
from gsloc.mapper.io import load_map
from gsloc.render.io import feature_path
from gsloc.render.io import write_feature_image
from gsloc.scene.io import load_splat_ply

SPEC = """\
[synth]
gaussian_count = 40
anisotropy_min = 1.0
anisotropy_max = 1.5
base_scale = 0.03
opacity_min = 0.3
opacity_max = 0.9
height = 96
width = 96
focal = 96.0
camera_count = 8
query_count = 2
feature_dim = 16
seed = 1
texture_beta = 0.0
"""


def synth_dir(tmp_path) -> str:
    spec = tmp_path / "spec.ini"
    spec.write_text(SPEC)
    out = str(tmp_path / "scene")
    assert run(["synth", "--spec", str(spec), "--out", out]) == 0
    return out


def test_pipeline(tmp_path):
    scene = synth_dir(tmp_path)
    lmap = str(tmp_path / "map.gslm")
    assert (
        run(
            [
                "build-map",
                "--scene",
                f"{scene}/scene.ply",
                "--cameras",
                f"{scene}/cameras.ini",
                "--features",
                f"{scene}/features",
                "--k",
                "2",
                "--out",
                lmap,
            ]
        )
        == 0
    )
    assert len(load_map(lmap)) > 0
    assert load_map(lmap).meta.k == 2

    pose = str(tmp_path / "pose.ini")
    code = run(
        [
            "localize",
            "--map",
            lmap,
            "--query-features",
            feature_path(f"{scene}/query_features", 0),
            "--intrinsics",
            f"{scene}/queries.ini",
            "--view",
            "0",
            "--preset",
            "efficient",
            "--out",
            pose,
        ]
    )
    assert code == 0
    assert load_pose(pose).success

    outputs = []
    for i in range(2):
        out = tmp_path / f"report{i}"
        args = ["eval", "--map", lmap, "--queries", f"{scene}/queries.ini"]
        assert run(args + ["--preset", "efficient", "--out", str(out)]) == 0
        outputs.append(out)
    for name in ["report.csv", "summary.ini"]:
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
    assert os.path.isfile(outputs[0] / "timing.csv")


def test_split_and_render(tmp_path):
    scene = synth_dir(tmp_path)
    split = str(tmp_path / "split.ply")
    assert run(["split", "--input", f"{scene}/scene.ply", "--beta", "1.2", "--out", split]) == 0
    assert len(load_splat_ply(split)) == 3 * 40
    assert load_splat_ply(split).parent_ids[:3].tolist() == [0, 0, 0]

    renders = tmp_path / "renders"
    args = ["render", "--scene", split, "--camera", f"{scene}/cameras.ini"]
    assert run(args + ["--view", "3", "--features", "--out", str(renders)]) == 0
    assert sorted(os.listdir(renders)) == ["0003.gsfm", "0003.png"]

    assert run(args + ["--view", "99", "--out", str(renders)]) == EXIT_DATA
    assert run(["split", "--input", split, "--beta", "1.8", "--out", split]) == EXIT_DATA


def test_usage_errors():
    for argv in [[], ["build-map"], ["teleport"], ["localize", "--map", "x"]]:
        with pytest.raises(SystemExit) as exc:
            run(argv)
        assert exc.value.code == EXIT_USAGE


def test_missing_input(tmp_path):
    missing = str(tmp_path / "nope.ply")
    assert run(["split", "--input", missing, "--out", str(tmp_path / "out.ply")]) == EXIT_DATA
    assert run(["--config", missing, "split", "--input", missing, "--out", "x"]) == EXIT_DATA


def test_blank_query(tmp_path):
    scene = synth_dir(tmp_path)
    lmap = str(tmp_path / "map.gslm")
    args = ["build-map", "--scene", f"{scene}/scene.ply", "--cameras", f"{scene}/cameras.ini"]
    assert run(args + ["--features", f"{scene}/features", "--out", lmap]) == 0

    blank = str(tmp_path / "blank.gsfm")
    write_feature_image(np.zeros((96, 96, 16)), blank)
    code = run(
        [
            "localize",
            "--map",
            lmap,
            "--query-features",
            blank,
            "--intrinsics",
            f"{scene}/queries.ini",
            "--out",
            str(tmp_path / "pose.ini"),
        ]
    )
    assert code == EXIT_LOCALIZATION
    assert not load_pose(str(tmp_path / "pose.ini")).success


def test_truncated_query(tmp_path):
    scene = synth_dir(tmp_path)
    lmap = str(tmp_path / "map.gslm")
    args = ["build-map", "--scene", f"{scene}/scene.ply", "--cameras", f"{scene}/cameras.ini"]
    assert run(args + ["--features", f"{scene}/features", "--out", lmap]) == 0

    short = tmp_path / "short.gsfm"
    short.write_bytes(b"GSFM\x01\x00")
    args = ["localize", "--map", lmap, "--query-features", str(short)]
    args += ["--intrinsics", f"{scene}/queries.ini", "--out", str(tmp_path / "pose.ini")]
    assert run(args) == EXIT_DATA
