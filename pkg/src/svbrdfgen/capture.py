"""The capture pipeline: generate replicate SVBRDFs from a condition
photograph, select among seeds, evaluate against references, and export
renders and contact sheets.

Selection follows the three strategies of the pipeline: a fixed seed,
render-error selection (re-render every replicate under the capture
lighting and pick the one closest to the input photograph), and manual
selection via an exported contact sheet plus a pick index.

The perceptual stand-in ``proxy_perceptual_error`` replaces a pretrained
perceptual metric: a weighted multi-scale (4 dyadic levels) mean absolute
difference of tone-mapped color and of luminance gradient magnitudes.
Plain RMSE is always reported alongside it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .conditions import CaptureLighting, capture_photo, cond_channels, photo_slice
from .denoiser import DenoiserModel
from .diffusion import SamplerConfig, build_schedule, sample_eulera
from .images import box_downsample2, linear_to_srgb, luminance, tonemap, write_png
from .material import LATENT_CHANNELS, MaterialMaps, decode_material
from .shading import CameraModel, PointLight, render_point


class CaptureError(ValueError):
    pass


DEFAULT_SEEDS = tuple(range(10))
DEFAULT_LIGHT_COUNT = 128
DEFAULT_LIGHT_RADIUS = 2.41


@dataclass(frozen=True)
class Replicate:
    seed: int
    material: MaterialMaps
    render: np.ndarray  # photo channels under the capture lighting
    score: float  # proxy error against the condition photograph


@dataclass(frozen=True)
class ReplicateSet:
    condition: np.ndarray
    lighting: CaptureLighting
    replicates: tuple[Replicate, ...]

    def __post_init__(self):
        seeds = [r.seed for r in self.replicates]
        if sorted(seeds) != seeds:
            raise CaptureError("replicates must be ordered by seed")
        if any(not np.isfinite(r.score) for r in self.replicates):
            raise CaptureError("replicate scores must be finite")

    def by_seed(self, seed: int) -> Replicate:
        for r in self.replicates:
            if r.seed == seed:
                return r
        raise CaptureError(f"no replicate with seed {seed}")


@dataclass(frozen=True)
class EvalReport:
    rmse_diffuse: float
    rmse_specular: float
    rmse_roughness: float
    rmse_normal: float
    relight_proxy: float  # mean proxy error over the light set
    relight_rmse: float  # mean plain RMSE over the light set
    light_count: int
    light_radius: float
    light_seed: int

    def as_dict(self) -> dict:
        return {
            "rmse": {
                "diffuse": self.rmse_diffuse,
                "specular": self.rmse_specular,
                "roughness": self.rmse_roughness,
                "normal": self.rmse_normal,
            },
            "relighting": {"proxy": self.relight_proxy, "rmse": self.relight_rmse},
            "lights": {
                "count": self.light_count,
                "radius": self.light_radius,
                "seed": self.light_seed,
            },
        }


def proxy_perceptual_error(img_a: np.ndarray, img_b: np.ndarray, levels: int = 4) -> float:
    """Symmetric multi-scale image difference; zero iff the images are equal.

    Per dyadic level: mean |tonemapped color difference| plus a smaller
    gradient-magnitude term on tone-mapped luminance. Not calibrated against
    any learned perceptual metric; use only to rank candidates.
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise CaptureError(f"image shapes differ: {a.shape} vs {b.shape}")
    total = 0.0
    for level in range(levels):
        ta, tb = tonemap(a), tonemap(b)
        total += float(np.abs(ta - tb).mean())
        la, lb = luminance(ta), luminance(tb)
        ga = np.hypot(*np.gradient(la))
        gb = np.hypot(*np.gradient(lb))
        total += 0.25 * float(np.abs(ga - gb).mean())
        h, w = a.shape[:2]
        if level == levels - 1 or h < 4 or w < 4 or h % 2 or w % 2:
            break
        a, b = box_downsample2(a), box_downsample2(b)
    return total


def generate_replicates(
    model: DenoiserModel,
    condition: np.ndarray,
    lighting: CaptureLighting,
    seeds=DEFAULT_SEEDS,
    sampler: SamplerConfig | None = None,
) -> ReplicateSet:
    """Sample one decoded material per seed; deterministic per seed.

    ``condition`` is the (H, W, k) stack the conditional model expects;
    ``lighting`` describes how it was captured so replicates can be
    re-rendered for scoring.
    """
    k = cond_channels(lighting.variant)
    if model.cfg.cond_channels != k:
        raise CaptureError(
            f"model expects k={model.cfg.cond_channels} condition channels but "
            f"variant '{lighting.variant}' provides {k}"
        )
    if condition.shape[2] != k:
        raise CaptureError(f"condition stack has {condition.shape[2]} channels, expected {k}")
    res = condition.shape[0]
    if sampler is None:
        sampler = SamplerConfig()
    schedule = build_schedule(sampler.schedule_T)
    photo = condition[:, :, photo_slice(lighting.variant)]

    replicates = []
    for seed in sorted(int(s) for s in seeds):
        cfg = replace(sampler, seed=seed)
        latent = sample_eulera(
            model.velocity, (res, res, LATENT_CHANNELS), cfg, condition=condition, schedule=schedule
        )
        material = decode_material(latent)
        render = capture_photo(material, lighting)
        score = proxy_perceptual_error(render, photo)
        replicates.append(Replicate(seed, material, render, score))
    return ReplicateSet(condition, lighting, tuple(replicates))


def select_by_render_error(rs: ReplicateSet) -> tuple[int, dict[int, float]]:
    """Pick the replicate whose re-render best matches the input photograph.

    Returns (best seed, per-seed scores); ties break to the lowest seed.
    Requires the capture lighting to be known (it is recorded in the set);
    for unknown lighting use a fixed seed or the contact-sheet flow.
    """
    if not rs.replicates:
        raise CaptureError("empty replicate set")
    if rs.lighting is None:
        raise CaptureError(
            "capture lighting unknown: render-error selection is unavailable; "
            "use a fixed seed or export a contact sheet and pass a pick index"
        )
    scores = {r.seed: r.score for r in rs.replicates}
    best = min(rs.replicates, key=lambda r: (r.score, r.seed))
    return best.seed, scores


def hemisphere_lights(
    count: int, radius: float, seed: int, intensity: float | None = None
) -> list[PointLight]:
    """Uniform-over-solid-angle point lights on the upper hemisphere.

    Drawn as a sequential stream so a longer run with the same seed keeps
    the first lights unchanged (prefix-stable sampling).
    """
    rng = np.random.default_rng(seed)
    if intensity is None:
        intensity = float(np.pi * radius * radius)
    lights = []
    for _ in range(count):
        u, w = rng.random(2)
        z = u  # area-uniform on the hemisphere
        phi = 2.0 * np.pi * w
        s = np.sqrt(max(1.0 - z * z, 0.0))
        pos = (radius * s * np.cos(phi), radius * s * np.sin(phi), max(radius * z, 1e-3))
        lights.append(PointLight(pos, (intensity,) * 3))
    return lights


def evaluate_relighting(
    m: MaterialMaps,
    reference: MaterialMaps,
    light_count: int = DEFAULT_LIGHT_COUNT,
    radius: float = DEFAULT_LIGHT_RADIUS,
    seed: int = 0,
) -> EvalReport:
    """Per-map RMSE plus mean re-rendering error over a random light set."""
    if m.resolution != reference.resolution:
        raise CaptureError("materials must share one resolution for evaluation")
    cam = CameraModel.at_distance(radius)
    proxy_sum = 0.0
    rmse_sum = 0.0
    for light in hemisphere_lights(light_count, radius, seed):
        img_a = render_point(m, light, cam)
        img_b = render_point(reference, light, cam)
        proxy_sum += proxy_perceptual_error(img_a, img_b)
        rmse_sum += float(np.sqrt(((img_a - img_b) ** 2).mean()))
    return EvalReport(
        rmse_diffuse=float(np.sqrt(((m.diffuse - reference.diffuse) ** 2).mean())),
        rmse_specular=float(np.sqrt(((m.specular - reference.specular) ** 2).mean())),
        rmse_roughness=float(np.sqrt(((m.roughness - reference.roughness) ** 2).mean())),
        rmse_normal=float(np.sqrt(((m.normal - reference.normal) ** 2).mean())),
        relight_proxy=proxy_sum / light_count,
        relight_rmse=rmse_sum / light_count,
        light_count=light_count,
        light_radius=radius,
        light_seed=seed,
    )


# ---------------------------------------------------------------------------
# Contact sheets

_DIGITS = {
    "0": ["111", "101", "101", "101", "111"],
    "1": ["010", "110", "010", "010", "111"],
    "2": ["111", "001", "111", "100", "111"],
    "3": ["111", "001", "111", "001", "111"],
    "4": ["101", "101", "111", "001", "001"],
    "5": ["111", "100", "111", "001", "111"],
    "6": ["111", "100", "111", "101", "111"],
    "7": ["111", "001", "010", "010", "010"],
    "8": ["111", "101", "111", "101", "111"],
    "9": ["111", "101", "111", "001", "111"],
}


def _draw_label(tile: np.ndarray, text: str, scale: int = 2) -> None:
    """Stamp white-on-dark digits into the top-left corner of a tile."""
    x = 2
    for ch in text:
        glyph = _DIGITS.get(ch)
        if glyph is None:
            continue
        for r, rowbits in enumerate(glyph):
            for c, bit in enumerate(rowbits):
                if bit == "1":
                    r0, c0 = 2 + r * scale, x + c * scale
                    tile[r0 : r0 + scale, c0 : c0 + scale] = 1.0
                else:
                    r0, c0 = 2 + r * scale, x + c * scale
                    tile[r0 : r0 + scale, c0 : c0 + scale] *= 0.25
        x += 4 * scale


def material_tiles(m: MaterialMaps) -> list[np.ndarray]:
    """sRGB-ready property-map tiles: diffuse, specular, roughness, normal."""
    rough = np.repeat(m.roughness, 3, axis=2)
    normal_vis = 0.5 * m.normal + 0.5
    return [
        linear_to_srgb(m.diffuse),
        linear_to_srgb(m.specular),
        np.clip(rough, 0.0, 1.0),
        np.clip(normal_vis, 0.0, 1.0),
    ]


def contact_sheet(
    rs: ReplicateSet,
    preview_lights: list[PointLight] | None = None,
    tile_size: int | None = None,
) -> np.ndarray:
    """Labeled selection grid: one row per replicate, columns are the four
    property maps plus tone-mapped preview renders (sRGB, in [0, 1]).

    The sheet is exactly rows x (4 + previews) tiles of ``tile_size``.
    """
    if not rs.replicates:
        raise CaptureError("empty replicate set")
    res = rs.replicates[0].material.resolution
    if tile_size is None:
        tile_size = res
    if preview_lights is None:
        preview_lights = hemisphere_lights(2, DEFAULT_LIGHT_RADIUS, seed=7)
    cam = CameraModel.at_distance(DEFAULT_LIGHT_RADIUS)

    rows = []
    for rep in rs.replicates:
        tiles = material_tiles(rep.material)
        for light in preview_lights:
            hdr = render_point(rep.material, light, cam)
            tiles.append(linear_to_srgb(tonemap(hdr, exposure=2.0) * 2.0))
        tiles = [_fit_tile(t, tile_size) for t in tiles]
        _draw_label(tiles[0], str(rep.seed))
        rows.append(np.concatenate(tiles, axis=1))
    return np.clip(np.concatenate(rows, axis=0), 0.0, 1.0)


def _fit_tile(tile: np.ndarray, size: int) -> np.ndarray:
    from .images import resize_bilinear

    if tile.shape[0] == size:
        return tile.copy()
    return resize_bilinear(tile, size)


def save_sheet(path, sheet: np.ndarray) -> None:
    write_png(path, np.round(np.clip(sheet, 0.0, 1.0) * 255.0).astype(np.uint8))
