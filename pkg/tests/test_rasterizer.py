import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gsloc.config import load_config
from gsloc.core import DataError
from gsloc.core import SchemaError
from gsloc.render.io import read_feature_image
from gsloc.render.io import write_feature_image
from gsloc.render.rasterizer import RenderConfig
from gsloc.render.rasterizer import project_gaussian
from gsloc.render.rasterizer import project_scene
from gsloc.render.rasterizer import psnr
from gsloc.render.rasterizer import rasterize
from gsloc.render.rasterizer import rasterize_naive
from gsloc.render.rasterizer import render_feature_image
from gsloc.scene.core import CameraView
from gsloc.scene.core import Gaussian
from gsloc.scene.core import GaussianScene

CAM = CameraView(0, 100.0, 100.0, 50.0, 50.0, 100, 100)
SMALL_CAM = CameraView(1, 32.0, 32.0, 15.5, 15.5, 32, 32)


def single(mean, scale=0.1, opacity=0.8, color=(1.0, 0.5, 0.0), feature=None) -> GaussianScene:
    return GaussianScene(
        means=[mean],
        rotations=[[1.0, 0.0, 0.0, 0.0]],
        scales=[[scale, scale, scale]],
        opacities=[opacity],
        colors=[color],
        features=None if feature is None else [feature],
    )


def random_scene(rng, n, feature_dim=3) -> GaussianScene:
    means = np.stack(
        [rng.uniform(-1.5, 1.5, n), rng.uniform(-1.5, 1.5, n), rng.uniform(2.0, 6.0, n)],
        axis=1,
    )
    return GaussianScene(
        means=means,
        rotations=Rotation.random(n, rng).as_quat()[:, [3, 0, 1, 2]],
        scales=rng.uniform(0.01, 0.3, (n, 3)),
        opacities=rng.uniform(0.05, 1.0, n),
        colors=rng.uniform(0, 1, (n, 3)),
        features=rng.normal(size=(n, feature_dim)),
    )


def test_project_gaussian():
    g = single([0.0, 0.0, 5.0])[0]
    screen = project_gaussian(g, CAM)
    assert screen.mean2d.tolist() == pytest.approx([50, 50])
    assert screen.depth == pytest.approx(5)
    # (fx / z)^2 s^2 + low-pass
    assert np.allclose(screen.cov2d, np.diag([4.3, 4.3]), atol=1e-12)

    g = single([1.0, 0.0, 5.0])[0]
    assert project_gaussian(g, CAM).mean2d.tolist() == pytest.approx([70, 50])

    assert project_gaussian(single([0.0, 0.0, -5.0])[0], CAM) is None
    # far outside the image
    assert project_gaussian(single([50.0, 0.0, 5.0])[0], CAM) is None


def test_project_scene_order():
    scene = GaussianScene(
        means=[[0, 0, 6], [0, 0, 3], [0, 0, -1], [0, 0, 3]],
        rotations=[[1, 0, 0, 0]] * 4,
        scales=[[0.1] * 3] * 4,
        opacities=[0.5] * 4,
        colors=[[1, 1, 1]] * 4,
    )
    screen = project_scene(scene, CAM)
    assert screen.source_index.tolist() == [1, 3, 0]


def test_single_gaussian_weight():
    out = rasterize(single([0.0, 0.0, 5.0], opacity=0.8), CAM)
    at_center = [c for c in out.contributions if c.pixel == (50, 50)]
    assert len(at_center) == 1
    assert at_center[0].weight == pytest.approx(0.8)
    assert out.color[50, 50].tolist() == pytest.approx([0.8, 0.4, 0.0])
    assert out.transmittance[50, 50] == pytest.approx(0.2)
    # nothing far from the center
    assert out.transmittance[0, 0] == 1.0
    assert all(c.weight >= 0.01 for c in out.contributions)


def test_coincident_gaussians():
    scene = GaussianScene(
        means=[[0, 0, 5.5], [0, 0, 5.0]],
        rotations=[[1, 0, 0, 0]] * 2,
        scales=[[0.1] * 3] * 2,
        opacities=[0.25, 0.5],
        colors=[[1, 0, 0], [0, 1, 0]],
    )
    out = rasterize(scene, CAM)
    weights = {c.gaussian_index: c.weight for c in out.contributions if c.pixel == (50, 50)}
    assert weights[1] == pytest.approx(0.5)
    assert weights[0] == pytest.approx(0.125)
    assert out.transmittance[50, 50] == pytest.approx(0.375)


def test_opacity_clamp():
    out = rasterize(single([0.0, 0.0, 5.0], opacity=1.0), CAM)
    assert out.transmittance[50, 50] == pytest.approx(0.01)


def test_floor():
    scene = single([0.0, 0.0, 5.0], opacity=0.8)
    low = rasterize(scene, CAM, floor=0.01).contributions
    high = rasterize(scene, CAM, floor=0.5).contributions
    assert len(high) < len(low)
    assert (high.weight >= 0.5).all()
    assert set(zip(high.row, high.col)) <= set(zip(low.row, low.col))


@pytest.mark.parametrize("stop", [0.0, 1e-4])
def test_matches_naive(stop):
    rng = np.random.default_rng(42)
    for _ in range(50):
        scene = random_scene(rng, int(rng.integers(1, 201)))
        fast = rasterize(scene, SMALL_CAM, with_features=True, stop_transmittance=stop)
        slow = rasterize_naive(scene, SMALL_CAM, with_features=True, stop_transmittance=stop)

        assert np.array_equal(fast.contributions.gaussian_index, slow.contributions.gaussian_index)
        assert np.array_equal(fast.contributions.row, slow.contributions.row)
        assert np.array_equal(fast.contributions.col, slow.contributions.col)
        assert np.allclose(fast.contributions.weight, slow.contributions.weight, rtol=0, atol=1e-12)
        assert np.allclose(fast.color, slow.color, rtol=0, atol=1e-12)
        assert np.allclose(fast.features, slow.features, rtol=0, atol=1e-12)
        assert np.allclose(fast.transmittance, slow.transmittance, rtol=0, atol=1e-12)


def test_weight_sum():
    rng = np.random.default_rng(7)
    scene = random_scene(rng, 150)
    white = GaussianScene(
        means=scene.means,
        rotations=scene.rotations,
        scales=scene.scales,
        opacities=scene.opacities,
        colors=np.ones((len(scene), 3)),
    )
    out = rasterize(white, SMALL_CAM)
    assert np.allclose(out.color[..., 0], out.weight_sum, atol=1e-12)
    assert (out.weight_sum <= 1).all()
    assert (out.contributions.weight > 0).all()


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    scene = random_scene(rng, 80)
    perm = rng.permutation(len(scene))
    shuffled = scene.subset(perm)
    a = rasterize(scene, SMALL_CAM, with_features=True)
    b = rasterize(shuffled, SMALL_CAM, with_features=True)
    assert np.allclose(a.color, b.color, atol=1e-12)
    assert np.allclose(a.features, b.features, atol=1e-12)
    # same contributions, renumbered
    pairs_a = sorted(zip(a.contributions.gaussian_index, a.contributions.row, a.contributions.col))
    pairs_b = sorted(
        zip(perm[b.contributions.gaussian_index], b.contributions.row, b.contributions.col)
    )
    assert pairs_a == pairs_b


def test_feature_linearity():
    rng = np.random.default_rng(11)
    scene = random_scene(rng, 60, feature_dim=4)
    f1 = rng.normal(size=(len(scene), 4))
    f2 = rng.normal(size=(len(scene), 4))
    img1 = render_feature_image(scene.with_features(f1), SMALL_CAM)
    img2 = render_feature_image(scene.with_features(f2), SMALL_CAM)
    both = render_feature_image(scene.with_features(2.0 * f1 - 0.5 * f2), SMALL_CAM)
    assert np.allclose(both, 2.0 * img1 - 0.5 * img2, atol=1e-10)


def test_feature_image():
    scene = single([0.0, 0.0, 5.0], opacity=0.8, feature=[1.0, 2.0])
    image = render_feature_image(scene, CAM)
    assert image.shape == (100, 100, 2)
    assert image[50, 50].tolist() == pytest.approx([0.8, 1.6])
    assert image[0, 0].tolist() == [0.0, 0.0]


def test_errors():
    with pytest.raises(DataError):
        rasterize(GaussianScene.empty(), CAM)
    with pytest.raises(DataError):
        rasterize(single([0.0, 0.0, 5.0]), CAM, floor=0.0)
    with pytest.raises(DataError):
        render_feature_image(single([0.0, 0.0, 5.0]), CAM)


def test_nothing_visible():
    out = rasterize(single([0.0, 0.0, -5.0]), CAM)
    assert not len(out.contributions)
    assert (out.transmittance == 1).all()
    assert (out.color == 0).all()


def test_psnr():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == float("inf")
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert psnr(a, a + 0.01) == pytest.approx(40.0)


def test_gaussian_fields():
    g = Gaussian([0, 0, 5], [1, 0, 0, 0], [0.1] * 3, 0.5, [1, 1, 1])
    assert project_gaussian(g, CAM).source_index == 0


def test_render_config():
    cfg = RenderConfig.from_config(load_config())
    assert cfg == RenderConfig()
    assert (cfg.floor, cfg.near, cfg.stop_transmittance, cfg.tile) == (0.01, 0.01, 1e-4, 16)


def test_feature_file_errors(tmp_path):
    path = tmp_path / "0000.gsfm"
    write_feature_image(np.ones((2, 3, 4)), str(path))
    assert read_feature_image(str(path)).shape == (2, 3, 4)

    raw = path.read_bytes()
    for size in (0, 4, 15):
        path.write_bytes(raw[:size])
        with pytest.raises(SchemaError, match="truncated"):
            read_feature_image(str(path))

    path.write_bytes(raw[:-4])
    with pytest.raises(SchemaError, match="bytes"):
        read_feature_image(str(path))
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SchemaError, match="magic"):
        read_feature_image(str(path))
