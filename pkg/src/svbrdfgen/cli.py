"""Command-line interface.

Subcommands: forge, train, finetune, sample, select, eval, render, sheet.
Global flags: --seed, --profile desk|paper, --deterministic. Configs are
JSON files; every output directory gets a JSON sidecar recording the seed
and a hash of the effective configuration, so runs can be reproduced
byte for byte in deterministic mode.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import conditions
from .capture import (
    contact_sheet,
    evaluate_relighting,
    generate_replicates,
    hemisphere_lights,
    save_sheet,
    select_by_render_error,
)
from .denoiser import NetConfig, load_weights
from .diffusion import SamplerConfig, build_schedule, sample_eulera
from .forge import DatasetManifest, ForgeConfig, build_manifest, realize_record
from .images import linear_to_srgb, tonemap, write_pfm, write_png
from .material import (
    LATENT_CHANNELS,
    MaterialMaps,
    decode_material,
    load_material,
    save_material,
)
from .shading import CameraModel, PointLight, render_point
from .training import TrainConfig, finetune_conditional, train_backbone


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _write_sidecar(path: Path, payload: dict) -> None:
    payload = dict(payload)
    payload["config_hash"] = _config_hash(payload)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_json(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _load_source_tree(root) -> dict[str, MaterialMaps]:
    root = Path(root)
    sources = {}
    for sub in sorted(p for p in root.iterdir() if (p / "material.json").exists()):
        sources[sub.name] = load_material(sub)
    if not sources:
        raise SystemExit(f"no material directories under {root}")
    return sources


def _load_corpus(root, split: str = "train") -> list[MaterialMaps]:
    root = Path(root)
    manifest = DatasetManifest.load(root / "manifest.jsonl")
    records = manifest.train_records() if split == "train" else manifest.test_records()
    return [load_material(root / r.name) for r in records]


def cmd_forge(args) -> int:
    cfg_dict = _load_json(args.config)
    base = ForgeConfig.profile(args.profile)
    cfg = ForgeConfig(**{**asdict(base), **cfg_dict})
    sources = _load_source_tree(args.sources)
    rng = np.random.default_rng(args.seed)
    manifest = build_manifest(sorted(sources), cfg, rng)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.jsonl")
    realized: dict[str, MaterialMaps] = {}

    def resolve(name: str) -> MaterialMaps:
        if name in sources:
            return sources[name]
        return realized[name]

    for record in manifest.records:
        material = realize_record(record, cfg, resolve)
        realized[record.name] = material
        save_material(out / record.name, material)
    _write_sidecar(
        out / "forge.json",
        {"seed": args.seed, "profile": args.profile, "config": asdict(cfg), "records": len(manifest.records)},
    )
    print(f"forged {len(manifest.records)} exemplars -> {out}")
    return 0


def _train_config(args, variant: str) -> TrainConfig:
    cfg_dict = _load_json(args.config)
    cfg_dict.setdefault("seed", args.seed)
    cfg_dict.setdefault("deterministic", args.deterministic)
    cfg_dict["variant"] = variant
    if args.steps is not None:
        cfg_dict["steps"] = args.steps
    return TrainConfig(**cfg_dict)


def _net_config(args, resolution: int, k: int = 0) -> NetConfig:
    if args.profile == "paper":
        return NetConfig.paper(cond_channels=k)
    return NetConfig.desk(resolution=resolution, cond_channels=k)


def cmd_train(args) -> int:
    materials = _load_corpus(args.data)
    cfg = _train_config(args, "backbone")
    net = _net_config(args, materials[0].resolution)
    result = train_backbone(cfg, materials, net=net, run_dir=args.out)
    _write_sidecar(
        Path(args.out) / "run.json",
        {"seed": cfg.seed, "variant": cfg.variant, "config": asdict(cfg), "final_loss": float(result.losses[-1])},
    )
    print(f"trained backbone for {len(result.losses)} steps; final loss {result.losses[-1]:.4f}")
    return 0


def cmd_finetune(args) -> int:
    materials = _load_corpus(args.data)
    backbone = load_weights(args.backbone)
    cfg = _train_config(args, args.variant)
    result = finetune_conditional(backbone, cfg, materials, run_dir=args.out)
    _write_sidecar(
        Path(args.out) / "run.json",
        {"seed": cfg.seed, "variant": cfg.variant, "config": asdict(cfg), "final_loss": float(result.losses[-1])},
    )
    print(f"finetuned '{args.variant}' for {len(result.losses)} steps; final loss {result.losses[-1]:.4f}")
    return 0


def cmd_sample(args) -> int:
    model = load_weights(args.model)
    if model.cfg.cond_channels:
        raise SystemExit("sample generates unconditionally; use 'select' for conditional capture")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = build_schedule()
    res = model.cfg.resolution
    for i in range(args.count):
        seed = args.seed + i
        cfg = SamplerConfig(steps=args.steps, seed=seed)
        latent = sample_eulera(model.velocity, (res, res, LATENT_CHANNELS), cfg, schedule=schedule)
        material = decode_material(latent)
        mdir = out / f"sample_{seed:04d}"
        save_material(mdir, material)
        _write_sidecar(mdir / "sample.json", {"seed": seed, "steps": args.steps})
    print(f"sampled {args.count} materials -> {out}")
    return 0


def _build_condition(args, model):
    """Condition stack + lighting from either a reference material or files."""
    variant = args.variant
    if args.reference is not None:
        reference = load_material(args.reference)
        rng = np.random.default_rng(args.lighting_seed)
        lighting = conditions.sample_lighting(variant, rng)
        stack = conditions.condition_stack(reference, lighting)
        return stack, lighting, reference
    if args.photo is None or args.lighting is None:
        raise SystemExit("need either --reference or (--photo and --lighting)")
    from .images import read_pfm

    photos = [read_pfm(p) for p in args.photo]
    lighting = conditions.CaptureLighting(**_load_json(args.lighting))
    stack = np.concatenate(photos, axis=2)
    if lighting.variant == "colocated":
        view = CameraModel.at_distance(lighting.distance).view_vectors(stack.shape[0])
        stack = np.concatenate([stack, view], axis=2)
    return stack, lighting, None


def cmd_select(args) -> int:
    model = load_weights(args.model)
    stack, lighting, reference = _build_condition(args, model)
    seeds = list(range(args.seed, args.seed + args.replicates))
    sampler = SamplerConfig(steps=args.steps)
    rs = generate_replicates(model, stack, lighting, seeds, sampler)

    if args.pick is not None:
        best, scores = args.pick, {r.seed: r.score for r in rs.replicates}
        mode = "manual"
    else:
        best, scores = select_by_render_error(rs)
        mode = "render-error"

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rep in rs.replicates:
        save_material(out / f"replicate_{rep.seed:04d}", rep.material)
    save_material(out / "selected", rs.by_seed(best).material)
    payload = {
        "seed": args.seed,
        "selection": mode,
        "selected_seed": int(best),
        "scores": {str(k): float(v) for k, v in scores.items()},
        "lighting": asdict(lighting),
        "sampler_steps": args.steps,
    }
    if reference is not None:
        report = evaluate_relighting(rs.by_seed(best).material, reference, args.lights, args.radius)
        payload["eval"] = report.as_dict()
    _write_sidecar(out / "select.json", payload)
    print(f"selected seed {best} ({mode}) -> {out / 'selected'}")
    return 0


def cmd_eval(args) -> int:
    material = load_material(args.material)
    reference = load_material(args.reference)
    report = evaluate_relighting(material, reference, args.lights, args.radius, seed=args.seed)
    payload = {"seed": args.seed, **report.as_dict()}
    if args.out:
        _write_sidecar(Path(args.out), payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_render(args) -> int:
    material = load_material(args.material)
    light = PointLight(tuple(args.light), (args.intensity,) * 3)
    cam = CameraModel.at_distance(args.distance)
    hdr = render_point(material, light, cam)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".pfm":
        write_pfm(out, hdr)
    else:
        write_png(out, np.round(linear_to_srgb(tonemap(hdr, 2.0) * 2.0) * 255).astype(np.uint8))
    _write_sidecar(
        out.with_suffix(out.suffix + ".json"),
        {"seed": args.seed, "light": list(args.light), "intensity": args.intensity, "distance": args.distance},
    )
    print(f"rendered -> {out}")
    return 0


def cmd_sheet(args) -> int:
    model = load_weights(args.model)
    stack, lighting, _reference = _build_condition(args, model)
    seeds = list(range(args.seed, args.seed + args.replicates))
    rs = generate_replicates(model, stack, lighting, seeds, SamplerConfig(steps=args.steps))
    sheet = contact_sheet(rs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_sheet(out, sheet)
    _write_sidecar(
        out.with_suffix(".json"),
        {"seed": args.seed, "replicates": args.replicates, "lighting": asdict(lighting)},
    )
    print(f"contact sheet with {len(rs.replicates)} rows -> {out}")
    return 0


def _add_condition_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", default="colocated", choices=list(conditions.VARIANTS))
    p.add_argument("--reference", help="reference material directory (synthetic capture)")
    p.add_argument("--lighting-seed", type=int, default=0, help="lighting draw for --reference")
    p.add_argument("--photo", nargs="*", help="condition photograph(s) as PFM files")
    p.add_argument("--lighting", help="CaptureLighting JSON file (with --photo)")
    p.add_argument("--steps", type=int, default=20, help="sampler steps")
    p.add_argument("--replicates", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svbrdfgen", description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--profile", default="desk", choices=["desk", "paper"])
    parser.add_argument("--deterministic", action="store_true", default=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forge", help="synthesize a training corpus")
    p.add_argument("--sources", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="ForgeConfig overrides (JSON)")
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("train", help="pretrain the unconditional backbone")
    p.add_argument("--data", required=True, help="forged corpus directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="TrainConfig overrides (JSON)")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="condition the backbone on photographs")
    p.add_argument("--backbone", required=True, help="backbone checkpoint")
    p.add_argument("--variant", required=True, choices=list(conditions.VARIANTS))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TrainConfig overrides (JSON)")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sample", help="unconditional material synthesis")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--steps", type=int, default=20)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("select", help="generate replicates and select one")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pick", type=int, help="manual selection: replicate seed to keep")
    p.add_argument("--lights", type=int, default=128)
    p.add_argument("--radius", type=float, default=2.41)
    _add_condition_args(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval", help="relighting + per-map error report")
    p.add_argument("--material", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--lights", type=int, default=128)
    p.add_argument("--radius", type=float, default=2.41)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a material under a point light")
    p.add_argument("--material", required=True)
    p.add_argument("--out", required=True, help=".png (preview) or .pfm (linear)")
    p.add_argument("--light", type=float, nargs=3, default=[0.0, 0.0, 2.41])
    p.add_argument("--intensity", type=float, default=float(np.pi * 2.41**2))
    p.add_argument("--distance", type=float, default=2.41)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sheet", help="export a labeled contact sheet")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_condition_args(p)
    p.set_defaults(func=cmd_sheet)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        import torch

        torch.set_num_threads(1)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
