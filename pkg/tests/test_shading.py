import math

import numpy as np
import pytest

from svbrdfgen.images import luminance
from svbrdfgen.material import MaterialMaps, random_material
from svbrdfgen.shading import (
    CameraModel,
    EnvironmentMap,
    PointLight,
    ShadingError,
    eval_brdf,
    ggx_distribution,
    pixel_grid,
    procedural_env,
    render_colocated,
    render_env,
    render_point,
    sample_camera_distance,
    synth_flash_noflash,
)


def lambertian(res, rho, normals=None):
    if normals is None:
        normals = np.zeros((res, res, 3))
        normals[:, :, 2] = 1.0
    return MaterialMaps(
        np.full((res, res, 3), rho),
        np.zeros((res, res, 3)),
        np.full((res, res, 1), 0.5),
        normals,
    )


def random_dirs(rng, count):
    v = rng.normal(size=(count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = np.abs(v[:, 2]) + 1e-6
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestBrdf:
    @pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0])
    def test_ggx_distribution_at_normal_incidence(self, alpha):
        assert abs(ggx_distribution(1.0, alpha) - 1.0 / (math.pi * alpha**2)) < 1e-6

    def test_reciprocity(self):
        rng = np.random.default_rng(0)
        wi, wo = random_dirs(rng, 10_000), random_dirs(rng, 10_000)
        n = np.zeros((10_000, 3))
        n[:, 2] = 1.0
        d = rng.random((10_000, 3))
        s = rng.random((10_000, 3))
        r = 0.01 + 0.99 * rng.random((10_000, 1))
        fwd = eval_brdf(d, s, r, n, wi, wo)
        rev = eval_brdf(d, s, r, n, wo, wi)
        assert np.abs(fwd - rev).max() < 1e-6

    def test_black_material_reflects_nothing(self):
        rng = np.random.default_rng(1)
        wi, wo = random_dirs(rng, 100), random_dirs(rng, 100)
        n = np.zeros((100, 3))
        n[:, 2] = 1.0
        z = np.zeros((100, 3))
        out = eval_brdf(z, z, np.full((100, 1), 0.3), n, wi, wo)
        assert np.abs(out).max() == 0.0

    def test_below_hemisphere_is_zero(self):
        n = np.array([0.0, 0.0, 1.0])
        wi = np.array([0.0, 0.0, -1.0])
        wo = np.array([0.0, 0.0, 1.0])
        out = eval_brdf(np.full(3, 0.5), np.full(3, 0.5), np.array([0.5]), n, wi, wo)
        assert np.abs(out).max() == 0.0

    def test_degenerate_half_vector_returns_diffuse_only(self):
        # wi ~ -wo with both barely above the horizon: the half vector is
        # undefined, so only the diffuse term survives.
        wi = np.array([1.0, 0.0, 1e-12])
        wo = np.array([-1.0, 0.0, 1e-12])
        out = eval_brdf(np.full(3, 0.6), np.full(3, 0.9), np.array([0.3]), np.array([0, 0, 1.0]), wi, wo)
        assert np.allclose(out, 0.6 / math.pi, atol=1e-9)

    def test_non_negative_finite(self):
        rng = np.random.default_rng(2)
        wi, wo = random_dirs(rng, 1000), random_dirs(rng, 1000)
        n = random_dirs(rng, 1000)
        out = eval_brdf(
            rng.random((1000, 3)), rng.random((1000, 3)), 0.01 + rng.random((1000, 1)) * 0.99,
            n, wi, wo,
        )
        assert np.isfinite(out).all() and out.min() >= 0.0


class TestPointRender:
    def test_lambertian_on_axis(self):
        res, rho, dist = 33, 0.63, 2.0  # odd res puts a pixel exactly on axis
        m = lambertian(res, rho)
        img = render_point(m, PointLight((0, 0, dist)), CameraModel.at_distance(dist))
        c = res // 2
        assert abs(img[c, c, 0] - rho / (math.pi * dist**2)) < 1e-4

    def test_full_image_matches_analytic_lambertian(self):
        # Independent oracle: per-pixel cosine / falloff arithmetic without eval_brdf.
        res, rho = 16, 0.4
        m = lambertian(res, rho)
        light = PointLight((0.2, -0.1, 1.5), (2.0, 2.0, 2.0))
        img = render_point(m, light, CameraModel.at_distance(1.0))
        pts = pixel_grid(res)
        to_l = np.array(light.position) - pts
        r2 = (to_l**2).sum(axis=2)
        cos = to_l[:, :, 2] / np.sqrt(r2)
        expected = rho / math.pi * cos * 2.0 / r2
        assert np.abs(img[:, :, 0] - expected).max() < 1e-12

    def test_zero_intensity_renders_black(self):
        m = lambertian(8, 0.5)
        img = render_point(m, PointLight((0, 0, 1), (0, 0, 0)), CameraModel.at_distance(1.0))
        assert np.abs(img).max() == 0.0

    def test_inverse_square_falloff(self):
        m = lambertian(33, 0.8)
        cam = CameraModel.at_distance(1.0)
        c = 16
        near = render_point(m, PointLight((0, 0, 1.0)), cam)[c, c, 0]
        far = render_point(m, PointLight((0, 0, 2.0)), cam)[c, c, 0]
        assert abs(far / near - 0.25) < 1e-4

    def test_light_below_plane_rejected(self):
        with pytest.raises(ShadingError, match="above"):
            PointLight((0, 0, -1.0))

    def test_quarter_turn_light_rotation_permutes_image(self):
        # flat-normal constant material: rotating the light 90 deg about z
        # rotates the image by 90 deg (pixel permutation).
        m = lambertian(16, 0.7)
        cam = CameraModel.at_distance(3.0)
        img_a = render_point(m, PointLight((0.3, 0.1, 0.8)), cam)
        img_b = render_point(m, PointLight((-0.1, 0.3, 0.8)), cam)  # 90 deg CCW
        assert np.abs(np.rot90(img_a, k=1) - img_b).max() < 1e-9


class TestColocated:
    def test_center_view_vector_on_axis(self):
        m = lambertian(33, 0.5)
        _, view = render_colocated(m, 1.0)
        assert np.allclose(view[16, 16], [0.0, 0.0, 1.0])

    def test_mirror_symmetric_material_renders_symmetric(self):
        rng = np.random.default_rng(4)
        half = rng.random((16, 8, 3))
        diffuse = np.concatenate([half, half[:, ::-1]], axis=1)
        m = MaterialMaps(
            diffuse,
            np.full((16, 16, 3), 0.04),
            np.full((16, 16, 1), 0.5),
            np.dstack([np.zeros((16, 16, 2)), np.ones((16, 16))]),
        )
        img, _ = render_colocated(m, 1.3)
        assert np.abs(img - img[:, ::-1]).max() < 1e-5

    def test_camera_distance_mean_matches_gamma(self):
        rng = np.random.default_rng(5)
        draws = 0.5 * rng.gamma(2.0, 2.0, size=1_000_000)
        assert abs(draws.mean() - 2.0) < 0.02
        # and the sequential sampler agrees with the same distribution
        rng = np.random.default_rng(5)
        assert sample_camera_distance(rng) == draws[0]

    def test_rejects_nonpositive_distance(self):
        with pytest.raises(ShadingError, match="positive"):
            render_colocated(lambertian(8, 0.5), 0.0)


class TestEnvRender:
    def test_white_furnace_flat(self):
        m = lambertian(8, 0.66)
        env = EnvironmentMap(np.ones((8, 16, 3)))
        img = render_env(m, env, 16, np.random.default_rng(0))
        assert np.abs(img - 0.66).max() < 1e-12

    def test_white_furnace_tilted_normals(self):
        base = random_material(16, np.random.default_rng(6))
        m = lambertian(16, 0.4, normals=base.normal.copy())
        env = EnvironmentMap(np.ones((4, 8, 3)))
        img = render_env(m, env, 256, np.random.default_rng(1))
        assert np.abs(img - 0.4).max() < 0.008  # within 2%

    def test_full_rotation_is_identity(self):
        m = random_material(8, np.random.default_rng(7))
        env = procedural_env(8, np.random.default_rng(8))
        a = render_env(m, env, 8, np.random.default_rng(9))
        b = render_env(m, env.rotated(2 * np.pi), 8, np.random.default_rng(9))
        assert np.abs(a - b).max() < 1e-6

    def test_black_material_black_image(self):
        m = lambertian(8, 0.0)
        env = procedural_env(8, np.random.default_rng(10))
        assert np.abs(render_env(m, env, 8, np.random.default_rng(0))).max() == 0.0

    def test_deterministic_given_seed(self):
        m = random_material(8, np.random.default_rng(11))
        env = procedural_env(8, np.random.default_rng(12))
        a = render_env(m, env, 16, np.random.default_rng(42))
        b = render_env(m, env, 16, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_env_must_be_non_negative(self):
        with pytest.raises(ShadingError, match="non-negative"):
            EnvironmentMap(-np.ones((4, 8, 3)))


class TestFlashNoFlash:
    def setup_method(self):
        self.m = random_material(16, np.random.default_rng(13))
        self.env = procedural_env(8, np.random.default_rng(14))
        self.cam = CameraModel.at_distance(1.0)

    def test_log_ratio_upper_bound_value(self):
        flash, no_flash = synth_flash_noflash(
            self.m, self.env, self.cam, math.log(1.5), 32, np.random.default_rng(15)
        )
        ratio = luminance(flash - no_flash).mean() / luminance(no_flash).mean()
        assert abs(ratio - 1.5) < 1e-3

    def test_flash_dominates_no_flash(self):
        flash, no_flash = synth_flash_noflash(
            self.m, self.env, self.cam, math.log(0.5), 16, np.random.default_rng(16)
        )
        assert (flash >= no_flash).all()

    def test_out_of_range_ratio_rejected(self):
        with pytest.raises(ShadingError, match="log_ratio"):
            synth_flash_noflash(self.m, self.env, self.cam, math.log(2.0), 8, np.random.default_rng(0))

    def test_black_env_rejected(self):
        env = EnvironmentMap(np.zeros((4, 8, 3)))
        with pytest.raises(ShadingError, match="black"):
            synth_flash_noflash(self.m, env, self.cam, 0.0, 8, np.random.default_rng(0))
