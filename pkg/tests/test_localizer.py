import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gsloc.config import load_config
from gsloc.core import DataError
from gsloc.core import SchemaError
from gsloc.localizer.core import Correspondence
from gsloc.localizer.core import Keypoints
from gsloc.localizer.core import count_many_to_one
from gsloc.localizer.core import extract_query_keypoints
from gsloc.localizer.core import match
from gsloc.localizer.core import pose_error
from gsloc.localizer.pnp import PRESETS
from gsloc.localizer.pnp import LocalizeConfig
from gsloc.localizer.pnp import PoseEstimate
from gsloc.localizer.pnp import RansacConfig
from gsloc.localizer.pnp import load_pose
from gsloc.localizer.pnp import localize
from gsloc.localizer.pnp import save_pose
from gsloc.localizer.pnp import solve_pnp_ransac
from gsloc.mapper.core import LocalizationMap
from gsloc.scene.core import CameraView
from gsloc.scene.core import Pose
from gsloc.scene.core import matrix_to_quat

FAST = RansacConfig(min_iter=100, max_iter=1000, seed=0)


def keypoints(descriptors, pixels=None) -> Keypoints:
    descriptors = np.asarray(descriptors, dtype=float)
    if pixels is None:
        pixels = np.zeros((len(descriptors), 2))
    return Keypoints(np.asarray(pixels, dtype=float), descriptors, np.ones(len(descriptors)))


def scene_and_camera(rng, n) -> tuple[np.ndarray, np.ndarray, CameraView]:
    """World points, their exact pixels and the ground-truth camera."""
    rot = Rotation.from_rotvec(rng.normal(scale=0.3, size=3)).as_matrix()
    trans = rng.uniform(-1, 1, 3)
    cam = CameraView(0, 500.0, 500.0, 320.0, 240.0, 640, 480, matrix_to_quat(rot), trans)

    cam_pts = np.stack(
        [rng.uniform(-2, 2, n), rng.uniform(-1.5, 1.5, n), rng.uniform(4, 10, n)],
        axis=1,
    )
    world = (cam_pts - trans) @ rot
    pixels = cam_pts[:, :2] / cam_pts[:, 2:] * 500.0 + [320.0, 240.0]
    return world, pixels, cam


def correspondences(world, pixels) -> list[Correspondence]:
    return [Correspondence(px, pt, i, 1.0) for i, (pt, px) in enumerate(zip(world, pixels))]


# keypoints {{{


def test_single_keypoint():
    image = np.zeros((10, 10, 4))
    image[3, 5] = [3.0, 4.0, 0.0, 0.0]
    kp = extract_query_keypoints(image, 100)
    assert len(kp) == 1
    assert kp.pixels[0].tolist() == [5, 3]
    assert kp.descriptors[0].tolist() == pytest.approx([0.6, 0.8, 0, 0])
    assert kp.responses[0] == pytest.approx(5.0)


def test_no_keypoints():
    kp = extract_query_keypoints(np.zeros((8, 8, 3)), 100)
    assert len(kp) == 0
    assert kp.descriptors.shape == (0, 3)


def test_strongest_keypoints_first():
    rng = np.random.default_rng(0)
    image = np.zeros((40, 40, 2))
    # isolated peaks on a 5-pixel grid
    cells = [(r, c) for r in range(2, 40, 5) for c in range(2, 40, 5)][:50]
    strengths = rng.permutation(np.arange(1, 51)).astype(float)
    for (r, c), s in zip(cells, strengths):
        image[r, c] = [s, 0.0]

    kp = extract_query_keypoints(image, 10, subpixel=False)
    assert len(kp) == 10
    assert kp.responses.tolist() == list(range(50, 40, -1))
    for (x, y), resp in zip(kp.pixels, kp.responses):
        assert image[int(y), int(x), 0] == resp


def test_subpixel_keypoint():
    rows, cols = np.mgrid[0:20, 0:24]
    blob = np.exp(-((cols - 10.3) ** 2 + (rows - 7.8) ** 2) / (2 * 1.5**2))
    image = np.stack([blob, np.zeros_like(blob)], axis=2)

    kp = extract_query_keypoints(image, 5)
    assert len(kp) == 1
    assert kp.pixels[0].tolist() == pytest.approx([10.3, 7.8], abs=1e-9)

    coarse = extract_query_keypoints(image, 5, subpixel=False)
    assert coarse.pixels[0].tolist() == [10, 8]


def test_keypoint_dimension_mismatch():
    with pytest.raises(DataError):
        extract_query_keypoints(np.ones((4, 4, 3)), 10, feature_dim=8)
    with pytest.raises(DataError):
        extract_query_keypoints(np.ones((4, 4)), 10)


# }}}

# matching {{{


def test_match_identity():
    eye = np.eye(4)
    lmap = LocalizationMap(np.arange(12.0).reshape(4, 3), eye)
    corrs = match(keypoints(eye), lmap)
    assert [c.point_index for c in corrs] == [0, 1, 2, 3]
    assert all(c.similarity == pytest.approx(1.0) for c in corrs)
    assert corrs[2].point.tolist() == [6, 7, 8]


def test_match_orthogonal():
    lmap = LocalizationMap([[0, 0, 0]], [[0.0, 1.0]])
    assert match(keypoints([[1.0, 0.0]]), lmap) == []


def test_match_permutation():
    rng = np.random.default_rng(1)
    desc = rng.normal(size=(20, 16))
    perm = rng.permutation(20)
    lmap = LocalizationMap(rng.normal(size=(20, 3)), desc[perm])
    corrs = match(keypoints(desc), lmap)
    assert len(corrs) == 20
    # keypoint q sits at map index inverse(perm)[q]
    assert [c.point_index for c in corrs] == np.argsort(perm).tolist()


def test_match_zero_norm():
    lmap = LocalizationMap([[0, 0, 0], [1, 1, 1]], [[1.0, 0.0], [0.0, 0.0]])
    corrs = match(keypoints([[0.0, 0.0], [2.0, 0.0]]), lmap)
    assert len(corrs) == 1
    assert corrs[0].point_index == 0


def test_match_mutual():
    lmap = LocalizationMap([[0, 0, 0], [1, 0, 0]], [[1.0, 0.0], [0.0, 1.0]])
    query = keypoints([[1.0, 0.1], [1.0, 0.2]])

    one_way = match(query, lmap, mutual=False)
    assert [c.point_index for c in one_way] == [0, 0]
    assert count_many_to_one(one_way) == 2

    mutual = match(query, lmap, mutual=True)
    assert len(mutual) == 1
    assert mutual[0].similarity == pytest.approx(1 / np.sqrt(1.01))
    assert count_many_to_one(mutual) == 0


def test_match_errors():
    lmap = LocalizationMap([[0, 0, 0]], [[1.0, 0.0]])
    assert match(keypoints(np.zeros((0, 2))), lmap) == []
    with pytest.raises(DataError):
        match(keypoints([[1.0, 0.0, 0.0]]), lmap)


def test_count_many_to_one():
    corrs = [Correspondence(np.zeros(2), np.zeros(3), i, 1.0) for i in [0, 0, 1, 2, 2, 2]]
    assert count_many_to_one(corrs) == 5
    assert count_many_to_one([]) == 0


# }}}

# pose estimation {{{


def test_pnp_exact():
    rng = np.random.default_rng(2)
    world, pixels, cam = scene_and_camera(rng, 6)
    est = solve_pnp_ransac(correspondences(world, pixels), cam, FAST)
    assert est.success
    assert est.inlier_count == 6
    # all inliers: confidence reached at once, so min_iter bounds the run
    assert est.iterations_run == FAST.min_iter
    t_cm, r_deg = pose_error(est, cam)
    assert t_cm < 1e-4
    assert r_deg < 1e-5


def test_pnp_outliers():
    rng = np.random.default_rng(3)
    world, pixels, cam = scene_and_camera(rng, 100)
    outliers = rng.choice(100, size=30, replace=False)
    pixels[outliers] = rng.uniform([0, 0], [640, 480], size=(30, 2))

    est = solve_pnp_ransac(correspondences(world, pixels), cam, FAST)
    assert est.success
    assert est.inlier_count >= 70
    t_cm, r_deg = pose_error(est, cam)
    assert t_cm < 1e-2
    assert r_deg < 1e-3

    # reported inliers reproject within the threshold under the reported pose
    pose = est.pose
    cam_pts = world[list(est.inliers)] @ pose.R.T + pose.t
    proj = cam_pts[:, :2] / cam_pts[:, 2:] * 500.0 + [320.0, 240.0]
    err = np.linalg.norm(proj - pixels[list(est.inliers)], axis=1)
    assert (err < FAST.reproj_px).all()
    assert len(est.inliers) == est.inlier_count


def test_pnp_deterministic():
    rng = np.random.default_rng(4)
    world, pixels, cam = scene_and_camera(rng, 40)
    pixels[:10] += 50.0
    corrs = correspondences(world, pixels)
    a = solve_pnp_ransac(corrs, cam, FAST)
    b = solve_pnp_ransac(corrs, cam, FAST)
    assert np.array_equal(a.rotation_wc, b.rotation_wc)
    assert np.array_equal(a.translation_wc, b.translation_wc)
    assert a.inliers == b.inliers
    assert a.iterations_run == b.iterations_run


def test_pnp_too_few():
    rng = np.random.default_rng(5)
    world, pixels, cam = scene_and_camera(rng, 3)
    with pytest.raises(DataError):
        solve_pnp_ransac(correspondences(world, pixels), cam, FAST)


def test_localize_blank_query():
    lmap = LocalizationMap(np.zeros((5, 3)), np.eye(5))
    cam = CameraView(0, 50.0, 50.0, 15.5, 15.5, 32, 32)
    est = localize(np.zeros((32, 32, 5)), lmap, cam)
    assert not est.success
    assert est.inlier_count == 0


def test_pose_error():
    gt = Pose([1, 0, 0, 0], [0, 0, 0])
    assert pose_error(gt, gt) == pytest.approx((0.0, 0.0))

    shifted = Pose([1, 0, 0, 0], [0.1, 0, 0])
    assert pose_error(shifted, gt) == pytest.approx((10.0, 0.0))

    quarter = Pose([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)], [0, 0, 0])
    assert pose_error(quarter, gt) == pytest.approx((0.0, 90.0))


def test_pose_error_invariance():
    rng = np.random.default_rng(6)

    def random_pose():
        return Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3)

    (r_est, t_est), (r_gt, t_gt) = random_pose(), random_pose()
    before = pose_error(Pose(matrix_to_quat(r_est), t_est), Pose(matrix_to_quat(r_gt), t_gt))

    # the same rigid motion of the world applied to both cameras
    q, s = random_pose()

    def moved(rot, trans):
        new_rot = rot @ q.T
        return Pose(matrix_to_quat(new_rot), trans - new_rot @ s)

    after = pose_error(moved(r_est, t_est), moved(r_gt, t_gt))
    assert after == pytest.approx(before, rel=1e-9)


# }}}

# configuration and files {{{


def test_presets():
    cfg = RansacConfig.from_preset("efficient", seed=3)
    assert (cfg.min_iter, cfg.max_iter, cfg.seed) == (100, 1000, 3)
    assert PRESETS["default"] == (1000, 100000)
    with pytest.raises(DataError):
        RansacConfig.from_preset("fastest")

    loc = LocalizeConfig.from_config(load_config())
    assert loc.preset == "default"
    assert loc.ransac.max_iter == 100000
    assert loc.mutual

    efficient = loc.with_preset("efficient")
    assert efficient.ransac.min_iter == 100
    assert efficient.ransac.reproj_px == loc.ransac.reproj_px


def test_pose_roundtrip(tmp_path):
    est = PoseEstimate(
        rotation_wc=matrix_to_quat(Rotation.random(random_state=1).as_matrix()),
        translation_wc=np.array([0.1, -2.5, 3.0]),
        inlier_count=42,
        iterations_run=1000,
        many_to_one_count=3,
        runtime_ms=12.3456,
    )
    path = tmp_path / "pose.ini"
    save_pose(est, str(path))
    loaded = load_pose(str(path))
    assert loaded.rotation_wc.tolist() == est.rotation_wc.tolist()
    assert loaded.translation_wc.tolist() == est.translation_wc.tolist()
    assert (loaded.inlier_count, loaded.iterations_run, loaded.many_to_one_count) == (42, 1000, 3)
    assert loaded.runtime_ms == pytest.approx(12.346)
    assert loaded.success

    path.write_text("[other]\n")
    with pytest.raises(SchemaError):
        load_pose(str(path))


# }}}
