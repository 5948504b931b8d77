import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svbrdfgen.images import read_png, write_png
from svbrdfgen.material import (
    ALPHA_MIN,
    MaterialError,
    MaterialMaps,
    decode_material,
    encode_material,
    load_material,
    load_strip_exemplar,
    random_material,
    save_material,
)


def flat_normals(res):
    n = np.zeros((res, res, 3))
    n[:, :, 2] = 1.0
    return n


def constant_material(res=8, diffuse=0.5, specular=0.5, rough=0.5):
    return MaterialMaps(
        np.full((res, res, 3), diffuse),
        np.full((res, res, 3), specular),
        np.full((res, res, 1), rough),
        flat_normals(res),
    )


class TestEncodeDecode:
    def test_uniform_diffuse_half_maps_to_zero(self):
        latent = encode_material(constant_material(diffuse=0.5))
        assert np.allclose(latent[:, :, 0:3], 0.0)

    def test_flat_normal_is_identity_in_latent(self):
        latent = encode_material(constant_material())
        assert np.array_equal(latent[:, :, 7:10], flat_normals(8))

    def test_roundtrip_random_materials(self):
        for seed in range(20):
            m = random_material(16, np.random.default_rng(seed))
            back = decode_material(encode_material(m))
            for a, b in [
                (m.diffuse, back.diffuse),
                (m.specular, back.specular),
                (m.roughness, back.roughness),
                (m.normal, back.normal),
            ]:
                assert np.abs(a - b).max() < 1e-6

    def test_zero_latent_decodes_to_midpoints(self):
        m = decode_material(np.zeros((4, 4, 10)))
        assert np.allclose(m.diffuse, 0.5)
        assert np.allclose(m.specular, 0.5)
        assert np.allclose(m.roughness, 0.5)
        assert np.allclose(m.normal, [0.0, 0.0, 1.0])

    def test_decode_clamps_overshoot(self):
        latent = np.zeros((4, 4, 10))
        latent[:, :, 0] = 1.7
        assert np.allclose(decode_material(latent).diffuse[:, :, 0], 1.0)

    def test_decode_renormalizes_perturbed_normal(self):
        latent = np.zeros((2, 2, 10))
        latent[:, :, 7] = 0.6
        latent[:, :, 9] = 0.6
        n = decode_material(latent).normal
        assert np.allclose(n[:, :, 0], np.sqrt(0.5), atol=1e-9)
        assert np.allclose(n[:, :, 2], np.sqrt(0.5), atol=1e-9)

    def test_decode_rejects_non_finite(self):
        latent = np.zeros((4, 4, 10))
        latent[1, 2, 3] = np.nan
        with pytest.raises(MaterialError, match="non-finite"):
            decode_material(latent)

    def test_channel_order_sentinels(self):
        # A distinct constant per physical channel must land at the
        # documented latent slot and come back to the same map on decode.
        res = 4
        diffuse = np.stack([np.full((res, res), v) for v in (0.1, 0.2, 0.3)], axis=2)
        specular = np.stack([np.full((res, res), v) for v in (0.4, 0.5, 0.6)], axis=2)
        rough = np.full((res, res, 1), 0.7)
        m = MaterialMaps(diffuse, specular, rough, flat_normals(res))
        latent = encode_material(m)
        expected = [2 * v - 1 for v in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)] + [0.0, 0.0, 1.0]
        assert np.allclose(latent[0, 0], expected)
        back = decode_material(latent)
        assert np.allclose(back.diffuse[0, 0], [0.1, 0.2, 0.3])
        assert np.allclose(back.specular[0, 0], [0.4, 0.5, 0.6])

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_decode_total_on_finite_latents(self, seed):
        rng = np.random.default_rng(seed)
        latent = rng.normal(0.0, 2.0, size=(8, 8, 10))
        decode_material(latent).validate()


class TestInvariants:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(MaterialError, match="resolution"):
            MaterialMaps(
                np.zeros((4, 4, 3)), np.zeros((8, 8, 3)), np.zeros((4, 4, 1)), flat_normals(4)
            )

    def test_non_square_rejected(self):
        with pytest.raises(MaterialError, match="square"):
            MaterialMaps(
                np.zeros((4, 8, 3)), np.zeros((4, 8, 3)), np.zeros((4, 8, 1)), np.zeros((4, 8, 3))
            )

    def test_validate_catches_bad_normals(self):
        n = flat_normals(4) * 2.0
        m = MaterialMaps(np.full((4, 4, 3), 0.5), np.full((4, 4, 3), 0.5), np.full((4, 4, 1), 0.5), n)
        with pytest.raises(MaterialError, match="unit length"):
            m.validate()

    def test_maps_frozen_after_construction(self):
        m = constant_material()
        with pytest.raises(ValueError):
            m.diffuse[0, 0, 0] = 0.0


class TestSaveLoad:
    def test_roundtrip_within_quantization(self, tmp_path):
        m = random_material(17, np.random.default_rng(3))
        save_material(tmp_path / "m", m)
        back = load_material(tmp_path / "m")
        assert np.abs(back.diffuse - m.diffuse).max() <= 1.0 / 65535
        assert np.abs(back.specular - m.specular).max() <= 1.0 / 65535
        assert np.abs(back.roughness - m.roughness).max() <= 1.0 / 65535
        # normals use an even quantizer scale: 1 ulp is 1/65534
        assert np.abs(back.normal - m.normal).max() <= 1.0 / 65534 + 1e-12

    def test_flat_normal_roundtrips_exactly(self, tmp_path):
        m = constant_material()
        save_material(tmp_path / "m", m)
        assert np.array_equal(load_material(tmp_path / "m").normal, m.normal)

    def test_missing_map_is_reported_by_name(self, tmp_path):
        m = constant_material()
        save_material(tmp_path / "m", m)
        (tmp_path / "m" / "roughness.png").unlink()
        with pytest.raises(MaterialError, match="roughness"):
            load_material(tmp_path / "m")

    def test_resolution_mismatch_rejected(self, tmp_path):
        m = constant_material(res=8)
        save_material(tmp_path / "m", m)
        write_png(tmp_path / "m" / "roughness.png", np.zeros((4, 4), dtype=np.uint16))
        with pytest.raises(MaterialError, match="disagree"):
            load_material(tmp_path / "m")

    def test_save_is_byte_deterministic(self, tmp_path):
        m = random_material(8, np.random.default_rng(0))
        save_material(tmp_path / "a", m)
        save_material(tmp_path / "b", m)
        for name in ("diffuse.png", "specular.png", "roughness.png", "normal.png", "material.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestStripIngestion:
    def test_five_tile_strip(self, tmp_path):
        rng = np.random.default_rng(0)
        res = 16
        tiles = [rng.random((res, res, 3)) for _ in range(5)]
        tiles[1] = 0.5 * np.ones((res, res, 3))  # normals tile -> flat
        strip = np.concatenate(tiles, axis=1)
        write_png(tmp_path / "s.png", np.round(strip * 65535).astype(np.uint16))
        m = load_strip_exemplar(tmp_path / "s.png")
        m.validate()
        assert m.resolution == res
        assert np.abs(m.diffuse - tiles[2]).max() < 1e-4  # 16-bit files stay linear

    def test_bad_width_rejected(self, tmp_path):
        write_png(tmp_path / "s.png", np.zeros((16, 40, 3), dtype=np.uint16))
        with pytest.raises(MaterialError, match="multiple"):
            load_strip_exemplar(tmp_path / "s.png")


class TestPngCodec:
    @pytest.mark.parametrize("dtype", [np.uint8, np.uint16])
    @pytest.mark.parametrize("channels", [1, 3])
    def test_roundtrip(self, tmp_path, dtype, channels):
        rng = np.random.default_rng(1)
        hi = 255 if dtype == np.uint8 else 65535
        img = rng.integers(0, hi + 1, size=(9, 13, channels)).astype(dtype)
        if channels == 1:
            img = img[:, :, 0]
        write_png(tmp_path / "x.png", img)
        assert np.array_equal(read_png(tmp_path / "x.png"), img)
