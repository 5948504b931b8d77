"""Condition-photograph synthesis shared by training and capture.

Each conditional variant defines how photographs are rendered from a
material and how many channels the condition stack carries:

* ``colocated``    - flash at the camera, distance ~ (1/2) Gamma(2, 2),
                     photo (3) + per-pixel view vectors (3), k = 6;
* ``natural``      - environment lighting at the reference camera, k = 3;
* ``flash-noflash``- aligned pair under environment + flash with a log
                     brightness ratio in [log(1/50), log(3/2)], k = 6.

A ``CaptureLighting`` records everything needed to re-render a candidate
material under the same lighting, which is what render-error selection
needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .material import MaterialMaps
from .shading import (
    LOG_RATIO_MAX,
    LOG_RATIO_MIN,
    CameraModel,
    EnvironmentMap,
    procedural_env,
    render_colocated,
    render_env,
    sample_camera_distance,
    synth_flash_noflash,
)

VARIANTS = ("colocated", "natural", "flash-noflash")

_COND_CHANNELS = {"backbone": 0, "colocated": 6, "natural": 3, "flash-noflash": 6}

# Channels of the stack that are photographs (excludes the view-vector map).
_PHOTO_SLICE = {"colocated": slice(0, 3), "natural": slice(0, 3), "flash-noflash": slice(0, 6)}


class ConditionError(ValueError):
    pass


def cond_channels(variant: str) -> int:
    if variant not in _COND_CHANNELS:
        raise ConditionError(f"unknown variant '{variant}' (expected one of {VARIANTS})")
    return _COND_CHANNELS[variant]


def photo_slice(variant: str) -> slice:
    return _PHOTO_SLICE[variant]


@dataclass(frozen=True)
class CaptureLighting:
    """Lighting parameters that fully determine a condition photograph."""

    variant: str
    distance: float = 1.0
    env_seed: int | None = None
    env_rotation: float = 0.0
    log_ratio: float = 0.0
    spp: int = 32
    noise_seed: int = 0

    def environment(self, resolution: int = 32) -> EnvironmentMap:
        if self.env_seed is None:
            raise ConditionError(f"variant '{self.variant}' carries no environment")
        base = procedural_env(resolution, np.random.default_rng(self.env_seed))
        return base.rotated(self.env_rotation)


def sample_lighting(variant: str, rng: np.random.Generator, spp: int = 32) -> CaptureLighting:
    """Draw the per-photograph lighting parameters for one variant."""
    if variant == "colocated":
        return CaptureLighting(variant, distance=sample_camera_distance(rng))
    if variant == "natural":
        return CaptureLighting(
            variant,
            env_seed=int(rng.integers(0, 2**31)),
            env_rotation=float(rng.uniform(0.0, 2.0 * np.pi)),
            spp=spp,
            noise_seed=int(rng.integers(0, 2**31)),
        )
    if variant == "flash-noflash":
        return CaptureLighting(
            variant,
            env_seed=int(rng.integers(0, 2**31)),
            env_rotation=float(rng.uniform(0.0, 2.0 * np.pi)),
            log_ratio=float(rng.uniform(LOG_RATIO_MIN, LOG_RATIO_MAX)),
            spp=spp,
            noise_seed=int(rng.integers(0, 2**31)),
        )
    raise ConditionError(f"unknown variant '{variant}' (expected one of {VARIANTS})")


def condition_stack(m: MaterialMaps, lighting: CaptureLighting) -> np.ndarray:
    """Render the (H, W, k) condition stack for a material under a lighting."""
    if lighting.variant == "colocated":
        img, view = render_colocated(m, lighting.distance)
        return np.concatenate([img, view], axis=2)
    if lighting.variant == "natural":
        env = lighting.environment()
        rng = np.random.default_rng(lighting.noise_seed)
        return render_env(m, env, lighting.spp, rng, CameraModel.at_distance(1.0))
    if lighting.variant == "flash-noflash":
        env = lighting.environment()
        rng = np.random.default_rng(lighting.noise_seed)
        cam = CameraModel.at_distance(1.0)
        flash, no_flash = synth_flash_noflash(m, env, cam, lighting.log_ratio, lighting.spp, rng)
        return np.concatenate([flash, no_flash], axis=2)
    raise ConditionError(f"unknown variant '{lighting.variant}'")


def capture_photo(m: MaterialMaps, lighting: CaptureLighting) -> np.ndarray:
    """The photograph channels only (what render-error selection compares)."""
    return condition_stack(m, lighting)[:, :, photo_slice(lighting.variant)]
