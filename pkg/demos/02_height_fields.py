"""Normal-map integration: normals -> height -> normals.

Shows the exact plane recovery, a sinusoid round trip, and a height field
derived from a synthetic material. Outputs land in demos/out/02/.
"""

from pathlib import Path

import numpy as np

from svbrdfgen.geometry import height_to_normals, normals_to_height
from svbrdfgen.images import write_png
from svbrdfgen.material import random_material

OUT = Path(__file__).parent / "out" / "02"
OUT.mkdir(parents=True, exist_ok=True)


def save_gray(name, field):
    lo, hi = field.min(), field.max()
    scaled = (field - lo) / (hi - lo) if hi > lo else field * 0
    write_png(OUT / name, np.round(scaled * 65535).astype(np.uint16))


# --- a tilted plane integrates exactly ----------------------------------------
res = 64
idx = (np.arange(res) + 0.5) / res - 0.5
x = np.broadcast_to(idx[None, :], (res, res))
y = np.broadcast_to(-idx[:, None], (res, res))

slope = 0.4
normals = np.dstack([np.full((res, res), -slope), np.zeros((res, res)), np.ones((res, res))])
normals /= np.linalg.norm(normals, axis=2, keepdims=True)
height = normals_to_height(normals, 1.0 / res)
plane = slope * x
print(f"plane recovery max error: {np.abs(height - (plane - plane.mean())).max():.2e}")

# --- sinusoid round trip --------------------------------------------------------
wave = 0.05 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
n_wave = height_to_normals(wave, 1.0 / res)
wave_back = normals_to_height(n_wave, 1.0 / res)
rmse = np.sqrt(((wave_back - (wave - wave.mean())) ** 2).mean())
print(f"sinusoid round-trip RMSE: {rmse:.2e}")
save_gray("sinusoid_height.png", wave_back)

# --- height of a synthetic material --------------------------------------------
material = random_material(128, np.random.default_rng(3))
h = normals_to_height(material.normal)
save_gray("material_height.png", h)
print(f"material height span: [{h.min():.4f}, {h.max():.4f}] (zero mean: {h.mean():.1e})")
print(f"outputs in {OUT}")
