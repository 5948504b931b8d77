"""Training-data forging: crops, procedural roughness, one-hot mixtures.

Builds a small corpus from synthetic source materials and prints the
manifest bookkeeping. Outputs land in demos/out/03/.
"""

from pathlib import Path

import numpy as np

from svbrdfgen.capture import material_tiles
from svbrdfgen.forge import (
    ForgeConfig,
    RandomFeatureNet,
    build_manifest,
    mix_materials,
    procedural_roughness,
    realize_record,
    selection_weights,
)
from svbrdfgen.images import linear_to_srgb, write_png
from svbrdfgen.material import random_material

OUT = Path(__file__).parent / "out" / "03"
OUT.mkdir(parents=True, exist_ok=True)


def save_srgb(name, linear):
    write_png(OUT / name, np.round(linear_to_srgb(np.clip(linear, 0, 1)) * 255).astype(np.uint8))


sources = {f"src{i}": random_material(128, np.random.default_rng(10 + i)) for i in range(6)}

# --- procedural roughness -------------------------------------------------------
m = sources["src0"]
blended = procedural_roughness(m, np.random.default_rng(0))
save_srgb("roughness_before.png", np.repeat(m.roughness, 3, axis=2))
save_srgb("roughness_after.png", np.repeat(blended.roughness, 3, axis=2))
print("procedural roughness: blended a frozen random net's output into the map")

# --- one-hot mixtures -------------------------------------------------------------
pair = [sources["src1"], sources["src2"]]
net = RandomFeatureNet(outputs=2, seed=99)
onehot = selection_weights(pair, net)
print(f"selection weights one-hot: {np.isin(onehot, [0., 1.]).all()}, "
      f"source-0 share {onehot[:, :, 0].mean():.2f}")
mixed = mix_materials(pair, np.random.default_rng(1))
save_srgb("mixture_diffuse.png", mixed.diffuse)
save_srgb("mixture_selection.png", np.repeat(onehot[:, :, :1], 3, axis=2))

# --- manifest + realization -------------------------------------------------------
cfg = ForgeConfig(crops_per_source=3, crop_min_px=48, crop_max_px=96, out_res=64,
                  mixture_count=4, test_sources=1)
manifest = build_manifest(sorted(sources), cfg, np.random.default_rng(5))
counts = {}
for record in manifest.records:
    counts[record.provenance] = counts.get(record.provenance, 0) + 1
print(f"manifest: {counts}, train {len(manifest.train_records())} / test {len(manifest.test_records())}")

realized = {}


def resolve(name):
    return sources.get(name) or realized[name]


for record in manifest.records[:6]:
    material = realize_record(record, cfg, resolve)
    realized[record.name] = material
    tiles = material_tiles(material)
    save_srgb(f"{record.name.replace('/', '_')}.png", np.concatenate(tiles, axis=1))
print(f"realized and exported the first 6 records -> {OUT}")
