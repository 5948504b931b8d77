import numpy as np
import pytest

from svbrdfgen.geometry import height_to_normals, normals_to_height


def world_grid(res):
    idx = (np.arange(res) + 0.5) / res - 0.5
    x = np.broadcast_to(idx[None, :], (res, res))
    y = np.broadcast_to(-idx[:, None], (res, res))
    return x, y


def plane_normals(res, sx, sy):
    n = np.stack(
        [np.full((res, res), -sx), np.full((res, res), -sy), np.ones((res, res))], axis=2
    )
    return n / np.linalg.norm(n, axis=2, keepdims=True)


class TestNormalsToHeight:
    def test_flat_normals_give_zero_height(self):
        n = np.zeros((16, 16, 3))
        n[:, :, 2] = 1.0
        assert np.abs(normals_to_height(n)).max() == 0.0

    def test_plane_recovered_exactly(self):
        res = 64
        x, y = world_grid(res)
        sx, sy = 0.37, -0.85
        plane = sx * x + sy * y
        h = normals_to_height(plane_normals(res, sx, sy), 1.0 / res)
        assert np.abs(h - (plane - plane.mean())).max() < 1e-6

    def test_zero_mean(self):
        rng = np.random.default_rng(0)
        n = height_to_normals(rng.random((32, 32)) * 0.1)
        assert abs(normals_to_height(n).mean()) < 1e-9

    def test_sinusoid_roundtrip_rmse(self):
        res = 64
        x, y = world_grid(res)
        h = np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
        n = height_to_normals(h, 1.0 / res)
        back = normals_to_height(n, 1.0 / res)
        rmse = np.sqrt(((back - (h - h.mean())) ** 2).mean())
        assert rmse < 1e-2

    def test_linearity_in_the_gradient_field(self):
        res = 32
        x, y = world_grid(res)
        h = 0.02 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
        # alpha-scaled slopes must integrate to alpha-scaled height
        for alpha in (0.5, 3.0):
            n1 = height_to_normals(h, 1.0 / res)
            slopes = -n1[:, :, :2] / n1[:, :, 2:3]
            n2 = np.concatenate([-alpha * slopes, np.ones((res, res, 1))], axis=2)
            n2 /= np.linalg.norm(n2, axis=2, keepdims=True)
            h1 = normals_to_height(n1, 1.0 / res)
            h2 = normals_to_height(n2, 1.0 / res)
            assert np.abs(h2 - alpha * h1).max() < 1e-9

    def test_rot180_equivariance(self):
        rng = np.random.default_rng(1)
        n = height_to_normals(rng.random((24, 24)) * 0.05)
        rotated = n[::-1, ::-1].copy()
        rotated[:, :, 0] *= -1
        rotated[:, :, 1] *= -1
        h = normals_to_height(n)
        h_rot = normals_to_height(rotated)
        assert np.abs(h_rot - h[::-1, ::-1]).max() < 1e-9

    def test_grazing_normals_are_clamped_with_warning(self):
        n = plane_normals(8, 50.0, 0.0)  # slope beyond the clamp, z < 0.05
        with pytest.warns(RuntimeWarning, match="grazing"):
            h = normals_to_height(n, 1.0 / 8)
        assert np.isfinite(h).all()
        slopes = np.diff(h, axis=1) * 8
        assert np.abs(slopes).max() <= 20.0 + 1e-6

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            normals_to_height(np.zeros((4, 4)))


class TestHeightToNormals:
    def test_zero_height_gives_flat_normals(self):
        n = height_to_normals(np.zeros((8, 8)))
        assert np.allclose(n[:, :, 2], 1.0)

    def test_plane_slope_in_x(self):
        res = 32
        x, _ = world_grid(res)
        s = 0.6
        n = height_to_normals(s * x, 1.0 / res)
        expected = np.array([-s, 0.0, 1.0])
        expected /= np.linalg.norm(expected)
        assert np.allclose(n[5, 5], expected, atol=1e-9)

    def test_constant_offset_does_not_change_normals(self):
        rng = np.random.default_rng(2)
        h = rng.random((16, 16)) * 0.1
        # identical up to float cancellation in the finite differences
        assert np.abs(height_to_normals(h) - height_to_normals(h + 3.7)).max() < 1e-11

    def test_unit_length(self):
        rng = np.random.default_rng(3)
        n = height_to_normals(rng.random((16, 16)))
        assert np.abs(np.linalg.norm(n, axis=2) - 1.0).max() < 1e-12
