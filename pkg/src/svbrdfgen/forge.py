"""Training-corpus synthesis: crops, procedural roughness, piece-wise
one-hot material mixtures, specular assignment and manifest bookkeeping.

Every forge operation is a deterministic function of its inputs and a seed,
and every record in a manifest carries its own seed, so re-running a
manifest reproduces the corpus bit for bit and records may be realized in
any order or in parallel.

The procedural transformations use a frozen randomly initialized dense
network (``RandomFeatureNet``). Its per-pixel input is 4 scalars: the
summed diffuse+specular albedo (RGB) and the height obtained by
integrating the normal map. Inputs are standardized per material (zero
mean, unit variance) before the net so that the tiny numeric range of
heights still produces spatial variation; this input encoding is our
choice and is documented here rather than inherited from anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import normals_to_height
from .images import box_downsample2, resize_bilinear
from .material import ALPHA_MIN, MaterialMaps, normalize_normals

SPECULAR_RANGE = (0.04, 0.08)
TWO_SOURCE_FRACTION = 0.66


class ForgeError(ValueError):
    pass


class RandomFeatureNet:
    """Frozen random dense net: 4 inputs -> two sin-activated hidden layers
    of width 32 -> ``outputs`` channels. Weights are N(0, 1/fan_in), biases
    N(0, 1), drawn once from the seed and immutable afterwards."""

    HIDDEN = 32

    def __init__(self, outputs: int, seed: int):
        self.outputs = int(outputs)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        dims = [4, self.HIDDEN, self.HIDDEN, self.outputs]
        self._weights = []
        self._biases = []
        last = len(dims) - 2
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            # hidden biases randomize the sin phases; the output bias stays
            # zero so spatial variation, not a constant offset, decides the
            # argmax in selection mode
            b = rng.normal(0.0, 1.0, size=fan_out) if i < last else np.zeros(fan_out)
            w.setflags(write=False)
            b.setflags(write=False)
            self._weights.append(w)
            self._biases.append(b)

    def __call__(self, features: np.ndarray) -> np.ndarray:
        """Map (..., 4) features to (..., outputs) raw logits."""
        h = np.asarray(features, dtype=np.float64)
        for i, (w, b) in enumerate(zip(self._weights, self._biases)):
            h = h @ w + b
            if i < len(self._weights) - 1:
                h = np.sin(h)
        return h


def _net_features(m: MaterialMaps) -> np.ndarray:
    """Standardized per-pixel (summed albedo RGB, height) features."""
    summed = m.diffuse + m.specular
    height = normals_to_height(m.normal)
    feats = np.concatenate([summed, height[:, :, None]], axis=2)
    mean = feats.mean(axis=(0, 1), keepdims=True)
    std = feats.std(axis=(0, 1), keepdims=True)
    return (feats - mean) / np.maximum(std, 1e-9)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def procedural_roughness(
    m: MaterialMaps, rng: np.random.Generator, blend_weight: float | None = None
) -> MaterialMaps:
    """Blend the roughness map with a procedurally generated one.

    A fresh RandomFeatureNet (seeded from ``rng``) maps albedo+height to a
    logistic-squashed value in (0, 1); the result replaces a random fraction
    ``blend_weight`` in [0.25, 0.75] of the original roughness.
    """
    net_seed = int(rng.integers(0, 2**63 - 1))
    if blend_weight is None:
        blend_weight = float(rng.uniform(0.25, 0.75))
    net = RandomFeatureNet(outputs=1, seed=net_seed)
    proc = _sigmoid(net(_net_features(m)))
    rough = (1.0 - blend_weight) * m.roughness + blend_weight * proc
    return MaterialMaps(
        m.diffuse.copy(), m.specular.copy(), np.clip(rough, ALPHA_MIN, 1.0), m.normal.copy()
    )


def selection_weights(sources: Sequence[MaterialMaps], net: RandomFeatureNet) -> np.ndarray:
    """One-hot source-selection weights at 2x the working resolution.

    The net consumes the per-pixel mean of the sources' (albedo, height)
    features on the upsampled grid and emits one logit per source; argmax
    (ties to the lowest index) produces exactly one-hot weights.
    """
    res2 = 2 * sources[0].resolution
    feats = np.mean(
        [resize_bilinear(_net_features(m), res2) for m in sources],
        axis=0,
    )
    logits = net(feats)
    choice = np.argmax(logits, axis=2)
    onehot = np.zeros(logits.shape)
    rows, cols = np.indices(choice.shape)
    onehot[rows, cols, choice] = 1.0
    return onehot


def mix_materials(sources: Sequence[MaterialMaps], rng: np.random.Generator) -> MaterialMaps:
    """Compose a piece-wise constant mixture of 2 or 3 source materials.

    All ten channels of each pixel come from exactly one source, chosen on
    the 2x-upsampled grid, then average-downsampled back to the working
    resolution (so downsampled pixels are 2x2 convex combinations).
    """
    if not 2 <= len(sources) <= 3:
        raise ForgeError(f"mixtures need 2 or 3 sources, got {len(sources)}")
    res = sources[0].resolution
    if any(m.resolution != res for m in sources):
        raise ForgeError("mixture sources must share one resolution")
    net = RandomFeatureNet(outputs=len(sources), seed=int(rng.integers(0, 2**63 - 1)))
    onehot = selection_weights(sources, net)

    # Material channels are upsampled by replication so that the up/downsample
    # pair is an exact inverse: mixing identical sources reproduces the source
    # bit for bit, while selection boundaries still get the 2x2 soft edge.
    def stack(channel: Callable[[MaterialMaps], np.ndarray]) -> np.ndarray:
        up = [np.repeat(np.repeat(channel(m), 2, axis=0), 2, axis=1) for m in sources]
        mixed = sum(up[k] * onehot[:, :, k : k + 1] for k in range(len(sources)))
        return box_downsample2(mixed)

    diffuse = stack(lambda m: m.diffuse)
    specular = stack(lambda m: m.specular)
    rough = stack(lambda m: m.roughness)
    normal = stack(lambda m: m.normal)
    return MaterialMaps(
        np.clip(diffuse, 0.0, 1.0),
        np.clip(specular, 0.0, 1.0),
        np.clip(rough, ALPHA_MIN, 1.0),
        normalize_normals(normal),
    )


def assign_specular(
    albedo: np.ndarray,
    roughness: np.ndarray,
    normal: np.ndarray,
    rng: np.random.Generator,
    metalness: np.ndarray | None = None,
) -> MaterialMaps:
    """Derive diffuse/specular albedo maps from a plain albedo map.

    specular = u + albedo * metalness with u ~ U[0.04, 0.08] homogeneous;
    diffuse = albedo * (1 - metalness). A missing metalness map means zero.
    """
    albedo = np.asarray(albedo, dtype=np.float64)
    u = float(rng.uniform(*SPECULAR_RANGE))
    if metalness is None:
        metal = np.zeros(albedo.shape[:2] + (1,))
    else:
        metal = np.asarray(metalness, dtype=np.float64)
        if metal.ndim == 2:
            metal = metal[:, :, None]
    specular = np.clip(u + albedo * metal, 0.0, 1.0)
    diffuse = np.clip(albedo * (1.0 - metal), 0.0, 1.0)
    return MaterialMaps(
        diffuse, specular, np.clip(np.asarray(roughness, dtype=np.float64), ALPHA_MIN, 1.0),
        np.asarray(normal, dtype=np.float64).copy(),
    )


# ---------------------------------------------------------------------------
# Crops


def extract_crop(
    src: MaterialMaps, center: tuple[float, float], angle: float, size_px: float, out_res: int
) -> MaterialMaps:
    """Resample one rotated square crop (deterministic; used by random_crops).

    ``center`` is in world units ([-0.5, 0.5]^2 of the source), ``angle`` in
    radians, ``size_px`` in source pixels. Normal xy components are rotated
    into the crop frame so they stay consistent with the rotated texture.
    """
    res = src.resolution
    size_world = size_px / res
    half = 0.5 * size_world * (abs(np.cos(angle)) + abs(np.sin(angle)))
    if half > 0.5 + 1e-9:
        raise ForgeError(f"crop of {size_px}px at angle {angle:.3f} cannot fit a {res}px source")

    # Crop-frame world axes expressed in source world coordinates.
    xaxis = np.array([np.cos(angle), np.sin(angle)])
    yaxis = np.array([-np.sin(angle), np.cos(angle)])
    t = (np.arange(out_res) + 0.5) / out_res - 0.5
    a = t[None, :, None] * size_world  # crop-local x, varies along columns
    b = -t[:, None, None] * size_world  # crop-local y, varies along rows
    world = np.asarray(center) + a * xaxis + b * yaxis
    col = (world[:, :, 0] + 0.5) * res - 0.5
    row = (0.5 - world[:, :, 1]) * res - 0.5

    stacked = np.concatenate([src.diffuse, src.specular, src.roughness, src.normal], axis=2)
    sampled = _bilinear_sample(stacked, row, col)

    normal = sampled[:, :, 7:10]
    nx = normal[:, :, 0] * xaxis[0] + normal[:, :, 1] * xaxis[1]
    ny = normal[:, :, 0] * yaxis[0] + normal[:, :, 1] * yaxis[1]
    normal = np.stack([nx, ny, normal[:, :, 2]], axis=2)
    return MaterialMaps(
        np.clip(sampled[:, :, 0:3], 0.0, 1.0),
        np.clip(sampled[:, :, 3:6], 0.0, 1.0),
        np.clip(sampled[:, :, 6:7], ALPHA_MIN, 1.0),
        normalize_normals(normal),
    )


def _bilinear_sample(img: np.ndarray, row: np.ndarray, col: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    r0 = np.clip(np.floor(row).astype(int), 0, h - 1)
    c0 = np.clip(np.floor(col).astype(int), 0, w - 1)
    r1 = np.clip(r0 + 1, 0, h - 1)
    c1 = np.clip(c0 + 1, 0, w - 1)
    fr = np.clip(row - r0, 0.0, 1.0)[:, :, None]
    fc = np.clip(col - c0, 0.0, 1.0)[:, :, None]
    top = img[r0, c0] * (1 - fc) + img[r0, c1] * fc
    bot = img[r1, c0] * (1 - fc) + img[r1, c1] * fc
    return top * (1 - fr) + bot * fr


def random_crops(
    src: MaterialMaps,
    count: int = 16,
    min_px: int = 512,
    max_px: int = 1400,
    out_res: int = 512,
    rng: np.random.Generator | None = None,
) -> list[MaterialMaps]:
    """Draw ``count`` random rotated crops, each resized to ``out_res``.

    Positions, rotations and sizes are uniform subject to the rotated square
    staying fully inside the source. Raises if the source cannot contain
    even a min_px crop at the worst-case 45 degree rotation.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if count < 1:
        raise ForgeError("count must be >= 1")
    res = src.resolution
    if min_px * np.sqrt(2.0) > res + 1e-9:
        raise ForgeError(
            f"source of {res}px cannot contain a {min_px}px crop under rotation"
        )
    crops = []
    for _ in range(count):
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
        extent = abs(np.cos(angle)) + abs(np.sin(angle))
        size_cap = min(float(max_px), res / extent)
        size = float(rng.uniform(min_px, size_cap))
        half = 0.5 * (size / res) * extent
        cx = float(rng.uniform(-0.5 + half, 0.5 - half))
        cy = float(rng.uniform(-0.5 + half, 0.5 - half))
        crops.append(extract_crop(src, (cx, cy), angle, size, out_res))
    return crops


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ForgeConfig:
    """Corpus recipe knobs; ``profile('desk'|'paper')`` builds the presets."""

    crops_per_source: int = 4
    crop_min_px: int = 48
    crop_max_px: int = 112
    out_res: int = 64
    roughness_blend_fraction: float = 0.2
    mixture_count: int = 8
    two_source_fraction: float = TWO_SOURCE_FRACTION
    test_sources: int = 1

    @staticmethod
    def profile(name: str) -> "ForgeConfig":
        if name == "desk":
            return ForgeConfig()
        if name == "paper":
            return ForgeConfig(
                crops_per_source=16,
                crop_min_px=512,
                crop_max_px=1400,
                out_res=512,
                roughness_blend_fraction=0.2,
                mixture_count=0,  # scaled per corpus size by the caller
                test_sources=2,
            )
        raise ForgeError(f"unknown profile '{name}' (expected 'desk' or 'paper')")


@dataclass(frozen=True)
class ExemplarRecord:
    """One forged exemplar: what to build, from what, with which seed."""

    name: str
    provenance: str  # crop | roughness-blend | mixture
    source_ids: tuple[str, ...]
    seed: int
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "provenance": self.provenance,
                "source_ids": list(self.source_ids),
                "seed": self.seed,
                "split": self.split,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "ExemplarRecord":
        d = json.loads(line)
        return ExemplarRecord(
            d["name"], d["provenance"], tuple(d["source_ids"]), d["seed"], d["split"]
        )


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ExemplarRecord, ...]

    def __post_init__(self):
        by_name = {r.name: r for r in self.records}
        roots = {r.name: _root_sources(r, by_name) for r in self.records}
        test_sources = {s for r in self.records if r.split == "test" for s in roots[r.name]}
        for r in self.records:
            leaked = test_sources & set(roots[r.name])
            if r.split == "train" and leaked:
                raise ForgeError(f"record {r.name}: test sources {sorted(leaked)} leak into train")

    def train_records(self) -> list[ExemplarRecord]:
        return [r for r in self.records if r.split == "train"]

    def test_records(self) -> list[ExemplarRecord]:
        return [r for r in self.records if r.split == "test"]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    @staticmethod
    def from_jsonl(text: str) -> "DatasetManifest":
        return DatasetManifest(
            tuple(ExemplarRecord.from_json(line) for line in text.splitlines() if line.strip())
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @staticmethod
    def load(path) -> "DatasetManifest":
        return DatasetManifest.from_jsonl(Path(path).read_text())


def _root_sources(record: ExemplarRecord, by_name: dict[str, ExemplarRecord]) -> tuple[str, ...]:
    """Follow mixture references down to the underlying source material ids."""
    roots: list[str] = []
    for sid in record.source_ids:
        if sid in by_name and by_name[sid] is not record:
            roots.extend(_root_sources(by_name[sid], by_name))
        else:
            roots.append(sid)
    return tuple(roots)


def build_manifest(
    source_ids: Sequence[str], cfg: ForgeConfig, rng: np.random.Generator
) -> DatasetManifest:
    """Plan a corpus: crop records per source, a roughness-blended fraction,
    and one-hot mixtures of crops drawn without replacement.

    The train/test split is at the *source* level so no test source ever
    contributes to a train exemplar. Raises when the requested mixture
    count exceeds the without-replacement capacity of the train crops.
    """
    if not source_ids:
        raise ForgeError("need at least one source material")
    ids = list(source_ids)
    if len(set(ids)) != len(ids):
        raise ForgeError("source ids must be unique")
    order = rng.permutation(len(ids))
    test_ids = {ids[i] for i in order[: cfg.test_sources]} if cfg.test_sources else set()

    records: list[ExemplarRecord] = []
    index_of: dict[str, int] = {}
    train_crop_names: list[str] = []
    for sid in ids:
        split = "test" if sid in test_ids else "train"
        for k in range(cfg.crops_per_source):
            name = f"crop/{sid}_{k:03d}"
            index_of[name] = len(records)
            records.append(
                ExemplarRecord(name, "crop", (sid,), int(rng.integers(0, 2**63 - 1)), split)
            )
            if split == "train":
                train_crop_names.append(name)

    n_blend = int(round(cfg.roughness_blend_fraction * len(train_crop_names)))
    if n_blend:
        blend_idx = rng.choice(len(train_crop_names), size=n_blend, replace=False)
        for i in sorted(int(j) for j in blend_idx):
            pos = index_of[train_crop_names[i]]
            old = records[pos]
            records[pos] = ExemplarRecord(
                old.name, "roughness-blend", old.source_ids, old.seed, old.split
            )

    n_two = int(round(cfg.two_source_fraction * cfg.mixture_count))
    n_three = cfg.mixture_count - n_two
    need = 2 * n_two + 3 * n_three
    if need > len(train_crop_names):
        raise ForgeError(
            f"{cfg.mixture_count} mixtures need {need} distinct crops, "
            f"only {len(train_crop_names)} available without replacement"
        )
    pool = [train_crop_names[int(i)] for i in rng.permutation(len(train_crop_names))]
    for i in range(cfg.mixture_count):
        arity = 2 if i < n_two else 3
        chosen = tuple(pool.pop() for _ in range(arity))
        records.append(
            ExemplarRecord(f"mix/{i:05d}", "mixture", chosen, int(rng.integers(0, 2**63 - 1)))
        )
    return DatasetManifest(tuple(records))


def realize_record(
    record: ExemplarRecord,
    cfg: ForgeConfig,
    resolve: Callable[[str], MaterialMaps],
) -> MaterialMaps:
    """Forge the material for one record; bit-reproducible from record.seed.

    ``resolve`` maps a source id (for crops) or a crop record name (for
    mixtures) to its material.
    """
    rng = np.random.default_rng(record.seed)
    if record.provenance in ("crop", "roughness-blend"):
        src = resolve(record.source_ids[0])
        max_px = min(cfg.crop_max_px, src.resolution)
        min_px = min(cfg.crop_min_px, max_px)
        crop = random_crops(src, 1, min_px, max_px, cfg.out_res, rng)[0]
        if record.provenance == "roughness-blend":
            crop = procedural_roughness(crop, rng)
        return crop
    if record.provenance == "mixture":
        sources = [resolve(name) for name in record.source_ids]
        return mix_materials(sources, rng)
    raise ForgeError(f"unknown provenance '{record.provenance}'")
