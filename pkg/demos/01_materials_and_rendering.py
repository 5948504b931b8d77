"""Materials, the 10-channel codec, and the GGX renderer.

Builds a synthetic SVBRDF, round-trips it through the latent codec and the
on-disk format, then renders it under a moving flash and an HDR
environment. Outputs land in demos/out/01/.
"""

import math
from pathlib import Path

import numpy as np

from svbrdfgen.capture import material_tiles
from svbrdfgen.images import linear_to_srgb, tonemap, write_png
from svbrdfgen.material import (
    decode_material,
    encode_material,
    load_material,
    random_material,
    save_material,
)
from svbrdfgen.shading import (
    CameraModel,
    EnvironmentMap,
    PointLight,
    procedural_env,
    render_colocated,
    render_env,
    render_point,
)

OUT = Path(__file__).parent / "out" / "01"
OUT.mkdir(parents=True, exist_ok=True)


def save_srgb(name, linear):
    write_png(OUT / name, np.round(linear_to_srgb(np.clip(linear, 0, 1)) * 255).astype(np.uint8))


def save_hdr_preview(name, hdr):
    save_srgb(name, tonemap(hdr, exposure=2.0) * 2.0)


rng = np.random.default_rng(42)
material = random_material(128, rng)
print(f"material resolution: {material.resolution}")

# --- latent codec round trip -------------------------------------------------
latent = encode_material(material)
print(f"latent shape {latent.shape}, range [{latent.min():.3f}, {latent.max():.3f}]")
back = decode_material(latent)
err = max(
    np.abs(back.diffuse - material.diffuse).max(),
    np.abs(back.normal - material.normal).max(),
)
print(f"decode(encode(m)) max error: {err:.2e}")

# --- disk round trip ----------------------------------------------------------
save_material(OUT / "material", material)
loaded = load_material(OUT / "material")
print(f"16-bit files round-trip error: {np.abs(loaded.diffuse - material.diffuse).max():.2e}")

for name, tile in zip(("diffuse", "specular", "roughness", "normal"), material_tiles(material)):
    save_srgb(f"map_{name}.png", tile)

# --- point-light renders -------------------------------------------------------
cam = CameraModel.at_distance(2.0)
for i, angle in enumerate(np.linspace(0, 2 * math.pi, 4, endpoint=False)):
    light = PointLight((0.8 * math.cos(angle), 0.8 * math.sin(angle), 1.2), (6.0, 6.0, 6.0))
    save_hdr_preview(f"point_{i}.png", render_point(material, light, cam))
print("wrote 4 orbiting point-light renders")

# --- colocated flash ------------------------------------------------------------
flash, view = render_colocated(material, distance=1.0)
save_hdr_preview("flash.png", flash)
print(f"on-axis view vector at center: {view[64, 64].round(3)}")

# --- environment lighting ------------------------------------------------------
env = procedural_env(64, np.random.default_rng(7))
lit = render_env(material, env, samples_per_pixel=64, rng=np.random.default_rng(0))
save_hdr_preview("environment.png", lit)

# sanity: a white furnace returns the albedo exactly for a Lambertian material
from svbrdfgen.material import MaterialMaps

lambertian = MaterialMaps(
    np.full((64, 64, 3), 0.5),
    np.zeros((64, 64, 3)),
    np.full((64, 64, 1), 0.5),
    np.dstack([np.zeros((64, 64, 2)), np.ones((64, 64))]),
)
furnace = render_env(lambertian, EnvironmentMap(np.ones((8, 16, 3))), 32, np.random.default_rng(1))
print(f"furnace test: albedo 0.5 -> rendered {furnace.mean():.6f}")
print(f"outputs in {OUT}")
