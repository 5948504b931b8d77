"""Microfacet shading and the condition-photograph renderers.

The exemplar is a flat square patch spanning [-0.5, 0.5]^2 at z = 0; all
lighting sits in the z > 0 half space. Pixel (i, j) of a resolution-H map
shades the point x = (j+0.5)/H - 0.5, y = 0.5 - (i+0.5)/H, z = 0, using the
material's shading normals (the height field never displaces geometry).

Reflectance is a Lambertian lobe plus a GGX microfacet lobe with Schlick
Fresnel (specular albedo as F0) and height-correlated Smith shadowing.
All renders are linear HDR, computed in float64, and deterministic
functions of their inputs and seed.

Three condition setups are provided:

* ``render_colocated`` - camera and flash at one point above the patch,
  with the matching per-pixel view-vector map;
* ``render_env``       - single-bounce direct lighting from an
  equirectangular HDR environment (cosine-weighted Monte Carlo over the
  shading normal's hemisphere, no plane self-occlusion);
* ``synth_flash_noflash`` - an aligned pair where the flash adds on top of
  the environment at a controlled log brightness ratio.

Environment lighting here deliberately ignores geometric displacement,
shadowing and interreflection; it is a direct-lighting approximation of a
path-traced ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .images import luminance
from .material import ALPHA_MIN, MaterialMaps

# Focal length (mm) at which the camera distance equals the exemplar size.
REFERENCE_FOCAL_MM = 35.0

LOG_RATIO_MIN = math.log(1.0 / 50.0)
LOG_RATIO_MAX = math.log(3.0 / 2.0)


class ShadingError(ValueError):
    pass


@dataclass(frozen=True)
class PointLight:
    """Point light in exemplar units; intensity is RGB radiant intensity."""

    position: tuple[float, float, float]
    intensity: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.position[2] <= 0:
            raise ShadingError(f"light must sit above the surface plane, got z={self.position[2]}")
        if min(self.intensity) < 0:
            raise ShadingError("light intensity must be non-negative")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; the frame always covers the unit exemplar exactly.

    focal_length follows the 35 mm convention: at 35 mm the camera distance
    equals the exemplar size (1.0), and distance scales proportionally.
    """

    position: tuple[float, float, float] = (0.0, 0.0, 1.0)
    focal_length: float = REFERENCE_FOCAL_MM

    def __post_init__(self):
        if self.position[2] <= 0:
            raise ShadingError(f"camera must sit above the surface plane, got z={self.position[2]}")

    @classmethod
    def at_distance(cls, distance: float) -> "CameraModel":
        return cls(position=(0.0, 0.0, float(distance)), focal_length=REFERENCE_FOCAL_MM * distance)

    def view_vectors(self, resolution: int) -> np.ndarray:
        """Unit per-pixel view vectors from the surface toward the camera."""
        pts = pixel_grid(resolution)
        v = np.asarray(self.position, dtype=np.float64) - pts
        return v / np.linalg.norm(v, axis=2, keepdims=True)


@dataclass(frozen=True)
class EnvironmentMap:
    """Equirectangular HDR radiance grid; row 0 is the zenith (+z)."""

    data: np.ndarray
    rotation: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ShadingError(f"environment map must be (H, W, 3), got {data.shape}")
        if not np.isfinite(data).all() or data.min() < 0:
            raise ShadingError("environment radiance must be finite and non-negative")
        object.__setattr__(self, "data", data)
        data.setflags(write=False)

    def rotated(self, angle: float) -> "EnvironmentMap":
        return EnvironmentMap(self.data, self.rotation + angle)

    def lookup(self, directions: np.ndarray) -> np.ndarray:
        """Bilinear radiance lookup for an (..., 3) array of unit directions."""
        d = np.asarray(directions, dtype=np.float64)
        he, we = self.data.shape[:2]
        theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
        phi = np.arctan2(d[..., 1], d[..., 0]) - self.rotation
        row = theta / np.pi * he - 0.5
        col = (phi / (2.0 * np.pi)) % 1.0 * we - 0.5
        r0 = np.floor(row).astype(int)
        c0 = np.floor(col).astype(int)
        fr = (row - r0)[..., None]
        fc = (col - c0)[..., None]
        r0c = np.clip(r0, 0, he - 1)
        r1c = np.clip(r0 + 1, 0, he - 1)
        c0w = c0 % we
        c1w = (c0 + 1) % we
        top = self.data[r0c, c0w] * (1 - fc) + self.data[r0c, c1w] * fc
        bot = self.data[r1c, c0w] * (1 - fc) + self.data[r1c, c1w] * fc
        return top * (1 - fr) + bot * fr


def pixel_grid(resolution: int) -> np.ndarray:
    """World positions (H, W, 3) of the pixel centers on the exemplar plane."""
    idx = (np.arange(resolution) + 0.5) / resolution - 0.5
    x = np.broadcast_to(idx[None, :], (resolution, resolution))
    y = np.broadcast_to(-idx[:, None], (resolution, resolution))
    return np.stack([x, y, np.zeros_like(x)], axis=2)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1, keepdims=True)


def eval_brdf(
    diffuse: np.ndarray,
    specular: np.ndarray,
    roughness: np.ndarray,
    n: np.ndarray,
    wi: np.ndarray,
    wo: np.ndarray,
) -> np.ndarray:
    """Evaluate the BRDF (1/sr) for unit directions wi (light) and wo (view).

    Broadcasts over any leading dimensions. Returns zero whenever either
    direction falls below the shading normal's hemisphere; a degenerate
    half-vector (wi = -wo) falls back to the diffuse term alone.
    """
    diffuse = np.asarray(diffuse, dtype=np.float64)
    specular = np.asarray(specular, dtype=np.float64)
    alpha = np.maximum(np.asarray(roughness, dtype=np.float64), ALPHA_MIN)
    n = np.asarray(n, dtype=np.float64)
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)

    ndi = _dot(n, wi)
    ndo = _dot(n, wo)
    above = (ndi > 0) & (ndo > 0)

    half_raw = wi + wo
    half_len = np.linalg.norm(half_raw, axis=-1, keepdims=True)
    degenerate = half_len < 1e-9
    half = half_raw / np.where(degenerate, 1.0, half_len)

    ndh = np.clip(_dot(n, half), 0.0, 1.0)
    hdi = np.clip(_dot(half, wi), 0.0, 1.0)

    a2 = alpha * alpha
    d_term = a2 / (np.pi * (ndh * ndh * (a2 - 1.0) + 1.0) ** 2)

    # Height-correlated Smith: G2 = 1 / (1 + Lambda(wi) + Lambda(wo)).
    def lam(cos_t):
        c2 = np.clip(cos_t, 1e-9, 1.0) ** 2
        return 0.5 * (np.sqrt(1.0 + a2 * (1.0 - c2) / c2) - 1.0)

    g_term = 1.0 / (1.0 + lam(ndi) + lam(ndo))
    # Schlick with specular albedo as F0; the grazing reflectance F90 fades
    # out with F0 so a zero specular albedo really is a black lobe.
    f90 = np.clip(50.0 * specular, 0.0, 1.0)
    f_term = specular + (f90 - specular) * (1.0 - hdi) ** 5

    spec = d_term * g_term * f_term / np.maximum(4.0 * ndi * ndo, 1e-12)
    spec = np.where(degenerate, 0.0, spec)
    value = diffuse / np.pi + spec
    return np.where(above, value, 0.0)


def ggx_distribution(ndh: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """GGX normal distribution term alone (used by tests and demos)."""
    a2 = np.asarray(alpha, dtype=np.float64) ** 2
    ndh = np.asarray(ndh, dtype=np.float64)
    return a2 / (np.pi * (ndh * ndh * (a2 - 1.0) + 1.0) ** 2)


def render_point(m: MaterialMaps, light: PointLight, cam: CameraModel) -> np.ndarray:
    """Direct illumination from one point light: BRDF * (n.wi) * I / r^2."""
    pts = pixel_grid(m.resolution)
    to_light = np.asarray(light.position, dtype=np.float64) - pts
    r2 = np.sum(to_light**2, axis=2, keepdims=True)
    wi = to_light / np.sqrt(r2)
    wo = cam.view_vectors(m.resolution)
    brdf = eval_brdf(m.diffuse, m.specular, m.roughness, m.normal, wi, wo)
    cos_i = np.maximum(_dot(m.normal, wi), 0.0)
    return brdf * cos_i * np.asarray(light.intensity, dtype=np.float64) / r2


def sample_camera_distance(rng: np.random.Generator) -> float:
    """Camera distance in exemplar sizes, drawn from (1/2) * Gamma(2, 2)."""
    return 0.5 * float(rng.gamma(2.0, 2.0))


def flash_intensity(distance: float) -> float:
    """Flash radiant intensity used for colocated captures.

    Scales with distance^2 so the exposure of the photograph stays roughly
    constant (a white Lambertian patch renders near its albedo at the image
    center for any distance), mimicking a camera's auto exposure.
    """
    return math.pi * distance * distance


def render_colocated(
    m: MaterialMaps,
    distance: float,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render with the flash at the camera; returns (image, view-vector map).

    If ``distance`` is None-like (<= 0 rejected), callers wanting the
    training distribution should draw it via :func:`sample_camera_distance`.
    """
    if distance <= 0:
        raise ShadingError(f"camera distance must be positive, got {distance}")
    cam = CameraModel.at_distance(distance)
    intensity = flash_intensity(distance)
    light = PointLight(cam.position, (intensity,) * 3)
    image = render_point(m, light, cam)
    return image, cam.view_vectors(m.resolution)


def _orthonormal_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Branchless tangent frame (Duff et al.) for unit normals (..., 3)."""
    nx, ny, nz = n[..., 0], n[..., 1], n[..., 2]
    sign = np.where(nz >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    t = np.stack([1.0 + sign * nx * nx * a, sign * b, -sign * nx], axis=-1)
    bt = np.stack([b, sign + ny * ny * a, -ny], axis=-1)
    return t, bt


def render_env(
    m: MaterialMaps,
    env: EnvironmentMap,
    samples_per_pixel: int = 64,
    rng: np.random.Generator | None = None,
    cam: CameraModel | None = None,
    _chunk: int = 32,
) -> np.ndarray:
    """Single-bounce environment lighting, cosine-sampled per pixel.

    Unbiased estimate of the direct-lighting integral over the shading
    normal's hemisphere (the plane does not occlude); deterministic given
    the generator state. Noise falls as 1/sqrt(samples_per_pixel).
    """
    if samples_per_pixel < 1:
        raise ShadingError("samples_per_pixel must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    if cam is None:
        cam = CameraModel.at_distance(1.0)
    res = m.resolution
    wo = cam.view_vectors(res)
    n = m.normal
    t, bt = _orthonormal_basis(n)
    accum = np.zeros((res, res, 3))
    done = 0
    while done < samples_per_pixel:
        count = min(_chunk, samples_per_pixel - done)
        u = rng.random((count, res, res, 2))
        r = np.sqrt(u[..., 0])
        phi = 2.0 * np.pi * u[..., 1]
        local = np.stack(
            [r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(1.0 - u[..., 0], 0.0))],
            axis=-1,
        )
        wi = local[..., 0:1] * t + local[..., 1:2] * bt + local[..., 2:3] * n
        radiance = env.lookup(wi)
        brdf = eval_brdf(m.diffuse, m.specular, m.roughness, n, wi, wo)
        accum += (brdf * radiance).sum(axis=0)
        done += count
    return np.pi * accum / samples_per_pixel


def synth_flash_noflash(
    m: MaterialMaps,
    env: EnvironmentMap,
    cam: CameraModel,
    log_ratio: float,
    samples_per_pixel: int = 64,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render an aligned (flash, no-flash) pair.

    The no-flash image is the environment render; the flash image adds a
    colocated flash whose mean luminance is exp(log_ratio) times the
    environment image's mean luminance. log_ratio must lie in
    [log(1/50), log(3/2)], the training contract.
    """
    if not (LOG_RATIO_MIN - 1e-12 <= log_ratio <= LOG_RATIO_MAX + 1e-12):
        raise ShadingError(
            f"log_ratio {log_ratio:.4f} outside [{LOG_RATIO_MIN:.4f}, {LOG_RATIO_MAX:.4f}]"
        )
    no_flash = render_env(m, env, samples_per_pixel, rng, cam)
    light = PointLight(cam.position, (1.0, 1.0, 1.0))
    flash_unit = render_point(m, light, cam)
    env_luma = float(luminance(no_flash).mean())
    flash_luma = float(luminance(flash_unit).mean())
    if env_luma <= 0.0:
        raise ShadingError("environment render is black; flash ratio is undefined")
    scale = 0.0 if flash_luma <= 0.0 else math.exp(log_ratio) * env_luma / flash_luma
    return no_flash + scale * flash_unit, no_flash


def procedural_env(resolution: int, rng: np.random.Generator, lobes: int = 6) -> EnvironmentMap:
    """Random smooth HDR environment: ambient floor plus Gaussian sky lobes.

    Stands in for captured HDR panoramas in training and demos.
    """
    he, we = resolution, 2 * resolution
    rows = (np.arange(he) + 0.5) / he * np.pi
    cols = (np.arange(we) + 0.5) / we * 2.0 * np.pi
    theta, phi = np.meshgrid(rows, cols, indexing="ij")
    dirs = np.stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=2
    )
    data = np.full((he, we, 3), 0.05 + 0.2 * rng.random())
    for _ in range(lobes):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        sharp = 2.0 ** rng.uniform(1.0, 7.0)
        color = rng.random(3) * rng.uniform(0.5, 8.0)
        w = np.exp(sharp * (np.clip(dirs @ axis, -1.0, 1.0) - 1.0))
        data = data + w[:, :, None] * color
    return EnvironmentMap(data)
