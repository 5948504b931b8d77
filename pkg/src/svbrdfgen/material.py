"""SVBRDF data model and the codec between physical maps and the 10-channel
latent image that the generative model consumes.

A material is four square maps sharing one resolution:

* diffuse albedo  (H, W, 3) linear reflectance in [0, 1]
* specular albedo (H, W, 3) linear reflectance in [0, 1]
* roughness       (H, W, 1) GGX alpha in [ALPHA_MIN, 1]
* normal          (H, W, 3) unit vectors, z > 0

The latent image packs these as 10 channels in the fixed order
diffuse(3), specular(3), roughness(1), normal(3). Albedos and roughness are
mapped affinely v -> 2v - 1 into [-1, 1]; normals keep their raw xyz
components. The channel ordering is part of the on-disk and in-memory
contract and is checked by tests with per-channel sentinel patterns.

On disk a material is a directory of four 16-bit linear PNG files plus a
JSON sidecar recording resolution, channel order and format version.
Normals are stored as 0.5*v + 0.5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import from_uint16, read_png, resize_bilinear, to_uint16, write_png

ALPHA_MIN = 0.01  # roughness floor; keeps GGX finite at normal incidence
NORMAL_Z_FLOOR = 0.05  # z clamp applied when decoding latents
LATENT_CHANNELS = 10
CHANNEL_ORDER = ("diffuse", "specular", "roughness", "normal")
FORMAT_VERSION = 1

_MAP_FILES = {
    "diffuse": "diffuse.png",
    "specular": "specular.png",
    "roughness": "roughness.png",
    "normal": "normal.png",
}


class MaterialError(ValueError):
    """Structural problem with material data (shapes, ranges, missing maps)."""


@dataclass(frozen=True)
class MaterialMaps:
    """An immutable SVBRDF: per-pixel reflectance parameters plus normals."""

    diffuse: np.ndarray
    specular: np.ndarray
    roughness: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        d, s, r, n = self.diffuse, self.specular, self.roughness, self.normal
        for name, arr, ch in (("diffuse", d, 3), ("specular", s, 3), ("roughness", r, 1), ("normal", n, 3)):
            if arr.ndim != 3 or arr.shape[2] != ch:
                raise MaterialError(f"{name} map must have shape (H, W, {ch}), got {arr.shape}")
            if not np.isfinite(arr).all():
                raise MaterialError(f"{name} map contains non-finite values")
        if not (d.shape[:2] == s.shape[:2] == r.shape[:2] == n.shape[:2]):
            raise MaterialError(
                "all maps must share one resolution, got "
                f"{d.shape[:2]}, {s.shape[:2]}, {r.shape[:2]}, {n.shape[:2]}"
            )
        if d.shape[0] != d.shape[1]:
            raise MaterialError(f"maps must be square, got {d.shape[:2]}")
        for arr in (d, s, r, n):
            arr.setflags(write=False)

    @property
    def resolution(self) -> int:
        return self.diffuse.shape[0]

    def validate(self, atol: float = 1e-4) -> "MaterialMaps":
        """Check the value-range invariants; returns self for chaining."""
        if self.diffuse.min() < -atol or self.diffuse.max() > 1 + atol:
            raise MaterialError("diffuse albedo outside [0, 1]")
        if self.specular.min() < -atol or self.specular.max() > 1 + atol:
            raise MaterialError("specular albedo outside [0, 1]")
        if self.roughness.min() < ALPHA_MIN - atol or self.roughness.max() > 1 + atol:
            raise MaterialError(f"roughness outside [{ALPHA_MIN}, 1]")
        norms = np.linalg.norm(self.normal, axis=2)
        if np.abs(norms - 1.0).max() > atol:
            raise MaterialError("normals are not unit length")
        if self.normal[:, :, 2].min() <= 0:
            raise MaterialError("normal z component must be positive")
        return self


def normalize_normals(n: np.ndarray, z_floor: float = NORMAL_Z_FLOOR) -> np.ndarray:
    """Clamp z to a positive floor, then renormalize to unit length."""
    n = np.asarray(n, dtype=np.float64).copy()
    n[:, :, 2] = np.maximum(n[:, :, 2], z_floor)
    return n / np.linalg.norm(n, axis=2, keepdims=True)


def encode_material(m: MaterialMaps) -> np.ndarray:
    """Pack a material into the (H, W, 10) latent image in [-1, 1]."""
    return np.concatenate(
        [
            2.0 * m.diffuse - 1.0,
            2.0 * m.specular - 1.0,
            2.0 * m.roughness - 1.0,
            m.normal,
        ],
        axis=2,
    ).astype(np.float64)


def decode_material(latent: np.ndarray) -> MaterialMaps:
    """Decode a latent image back into a valid material.

    Total on finite inputs: out-of-range channels are clamped and normals
    renormalized (z floored at 0.05 first), so diffusion outputs that
    overshoot [-1, 1] decode safely.
    """
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 3 or latent.shape[2] != LATENT_CHANNELS:
        raise MaterialError(f"latent must have shape (H, W, {LATENT_CHANNELS}), got {latent.shape}")
    if not np.isfinite(latent).all():
        bad = int((~np.isfinite(latent)).sum())
        raise MaterialError(f"latent contains {bad} non-finite values")
    diffuse = np.clip(0.5 * (latent[:, :, 0:3] + 1.0), 0.0, 1.0)
    specular = np.clip(0.5 * (latent[:, :, 3:6] + 1.0), 0.0, 1.0)
    roughness = np.clip(0.5 * (latent[:, :, 6:7] + 1.0), ALPHA_MIN, 1.0)
    normal = normalize_normals(latent[:, :, 7:10])
    return MaterialMaps(diffuse, specular, roughness, normal)


# Normals store 0.5*v + 0.5 on an even scale so that 0.5 (and hence the flat
# normal (0, 0, 1)) is exactly representable; quantization error stays <= 1 ulp.
_NORMAL_SCALE = 65534


def save_material(path, m: MaterialMaps) -> None:
    """Write a material directory: four 16-bit PNGs plus a JSON sidecar."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_png(path / _MAP_FILES["diffuse"], to_uint16(m.diffuse))
    write_png(path / _MAP_FILES["specular"], to_uint16(m.specular))
    write_png(path / _MAP_FILES["roughness"], to_uint16(m.roughness[:, :, 0]))
    normal_q = np.round(np.clip(0.5 * m.normal + 0.5, 0.0, 1.0) * _NORMAL_SCALE)
    write_png(path / _MAP_FILES["normal"], normal_q.astype(np.uint16))
    sidecar = {
        "format_version": FORMAT_VERSION,
        "resolution": m.resolution,
        "channel_order": list(CHANNEL_ORDER),
        "normal_encoding": "0.5*v+0.5",
    }
    (path / "material.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_material(path) -> MaterialMaps:
    """Load a material directory written by :func:`save_material`."""
    path = Path(path)
    for name, fname in _MAP_FILES.items():
        if not (path / fname).exists():
            raise MaterialError(f"{path}: missing {name} map file '{fname}'")
    diffuse = from_uint16(read_png(path / _MAP_FILES["diffuse"]))
    specular = from_uint16(read_png(path / _MAP_FILES["specular"]))
    rough = from_uint16(read_png(path / _MAP_FILES["roughness"]))[:, :, None]
    normal_png = np.asarray(read_png(path / _MAP_FILES["normal"]), dtype=np.float64)
    normal = 2.0 * (normal_png / _NORMAL_SCALE) - 1.0
    shapes = {a.shape[:2] for a in (diffuse, specular, rough, normal)}
    if len(shapes) != 1:
        raise MaterialError(f"{path}: map resolutions disagree: {sorted(shapes)}")
    # Quantization perturbs unit length by < 3e-5, well inside the material
    # invariant, so keep the stored components; renormalize only files from
    # other producers whose normals are visibly off unit length.
    norms = np.linalg.norm(normal, axis=2, keepdims=True)
    if np.abs(norms - 1.0).max() > 5e-4:
        normal = normalize_normals(normal / np.maximum(norms, 1e-12))
    return MaterialMaps(diffuse, specular, np.clip(rough, ALPHA_MIN, 1.0), normal)


def load_strip_exemplar(path, maps: int = 5) -> MaterialMaps:
    """Ingest a horizontal-strip exemplar PNG (one image per map, side by side).

    This is the layout used by the common single-image SVBRDF training sets:
    ``maps`` square tiles in one row. With five tiles the first is a rendered
    photograph and is skipped; with four, all tiles are property maps. Tile
    order is normal, diffuse, roughness, specular; 8-bit files are assumed to
    store albedos in sRGB and are linearized.
    """
    img = read_png(path)
    srgb = img.dtype == np.uint8
    img = np.asarray(img, dtype=np.float64) / (255.0 if srgb else 65535.0)
    h, w = img.shape[:2]
    if w % h != 0:
        raise MaterialError(f"{path}: width {w} is not a multiple of the strip height {h}")
    tiles = [img[:, i * h : (i + 1) * h] for i in range(w // h)]
    if len(tiles) < 4:
        raise MaterialError(f"{path}: expected at least 4 tiles, found {len(tiles)}")
    if maps == 5 and len(tiles) >= 5:
        tiles = tiles[1:5]
    else:
        tiles = tiles[:4]
    normal_t, diffuse_t, rough_t, specular_t = tiles

    def _linear(v):
        if not srgb:
            return v
        return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)

    rough = rough_t if rough_t.ndim == 2 else rough_t.mean(axis=2)
    return MaterialMaps(
        _linear(diffuse_t),
        _linear(specular_t),
        np.clip(rough[:, :, None], ALPHA_MIN, 1.0),
        normalize_normals(2.0 * normal_t - 1.0),
    )


def random_material(resolution: int, rng: np.random.Generator, smooth: bool = True) -> MaterialMaps:
    """Draw a synthetic but invariant-satisfying material, for tests and demos.

    Maps are random low-frequency fields; normals are tilted away from
    (0, 0, 1) by bounded slopes so z stays comfortably above the decode floor.
    """

    def field(channels: int) -> np.ndarray:
        if not smooth:
            return rng.random((resolution, resolution, channels))
        coarse = rng.random((max(resolution // 8, 2),) * 2 + (channels,))
        return resize_bilinear(coarse, resolution)

    diffuse = field(3)
    specular = 0.04 + 0.5 * field(3)
    roughness = ALPHA_MIN + (1.0 - ALPHA_MIN) * field(1)
    slopes = 1.5 * (field(2) - 0.5)
    normal = np.concatenate([slopes, np.ones((resolution, resolution, 1))], axis=2)
    normal /= np.linalg.norm(normal, axis=2, keepdims=True)
    return MaterialMaps(diffuse, np.clip(specular, 0.0, 1.0), roughness, normal)
