"""Training loops: backbone pretraining and conditional finetuning.

Per step: sample a batch, draw per-item timesteps uniformly in [1, T],
build (y, v_target) pairs, one AdamW update with linear warmup, then an
EMA update. All randomness (batch order, timesteps, noise, lighting
draws) comes from one seeded numpy generator, and deterministic mode runs
torch single-threaded, so identical (config, data, seed) reproduce the
loss curve and checkpoints exactly.

Conditions for the conditional variants are re-rendered every
``cond_refresh`` steps with fresh lighting draws (re-randomized
augmentation) rather than fixed per exemplar.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import conditions
from .container import read_container, write_container
from .denoiser import DenoiserModel, NetConfig, expand_input_head, init_backbone, save_weights
from .diffusion import NoiseSchedule, build_schedule, kdiffusion_loss, make_training_pair
from .material import MaterialMaps, encode_material


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; desk-scale defaults, paper values noted.

    learning_rate: paper 2e-5; warmup_steps: paper 100_000; batch_size:
    paper 32. ``epochs`` (paper: 50 backbone / 19 finetune) overrides
    ``steps`` when set, counting one epoch as a full pass over the data.
    """

    variant: str = "backbone"  # backbone | colocated | natural | flash-noflash
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    batch_size: int = 4
    steps: int = 2000
    epochs: int | None = None
    weight_decay: float = 0.01
    ema_decay: float = 0.999
    grad_clip: float = 1.0  # max grad norm; 0 disables
    lr_decay: str = "cosine"  # cosine | none (after warmup)
    adam_beta2: float = 0.99
    t_stratified: bool = True  # stratify per-batch timesteps (uniform marginal)
    seed: int = 0
    schedule_T: int = 1000
    cond_refresh: int = 25
    cond_spp: int = 32
    deterministic: bool = True
    checkpoint_every: int = 0  # 0 = only at the end

    def __post_init__(self):
        if self.variant != "backbone" and self.variant not in conditions.VARIANTS:
            raise TrainingError(f"unknown variant '{self.variant}'")
        for name in ("learning_rate", "batch_size", "steps", "schedule_T"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise TrainingError("ema_decay must be in [0, 1)")
        if self.lr_decay not in ("cosine", "none"):
            raise TrainingError(f"unknown lr_decay '{self.lr_decay}'")

    def total_steps(self, dataset_size: int) -> int:
        if self.epochs is None:
            return self.steps
        return self.epochs * max(1, dataset_size // self.batch_size)


@dataclass
class TrainResult:
    model: DenoiserModel
    ema_model: DenoiserModel
    losses: np.ndarray
    config: TrainConfig


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear ramp: 0 at step 0, exactly base_lr at step == warmup_steps."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(step / warmup_steps, 1.0)


def schedule_lr(cfg: "TrainConfig", step: int, total_steps: int) -> float:
    """Warmup ramp, then optionally a cosine decay toward zero at the end."""
    lr = warmup_lr(cfg.learning_rate, step, cfg.warmup_steps)
    if cfg.lr_decay == "cosine" and step >= cfg.warmup_steps and total_steps > cfg.warmup_steps:
        frac = (step - cfg.warmup_steps) / (total_steps - cfg.warmup_steps)
        lr = cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * frac))
    return lr


class EmaTracker:
    """Exponential moving average of model parameters."""

    def __init__(self, model: DenoiserModel, decay: float):
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}

    @torch.no_grad()
    def update(self, model: DenoiserModel) -> None:
        for k, v in model.state_dict().items():
            if v.dtype.is_floating_point:
                self.shadow[k].mul_(self.decay).add_(v, alpha=1.0 - self.decay)
            else:
                self.shadow[k] = v.detach().clone()

    def materialize(self, cfg: NetConfig, dtype: torch.dtype) -> DenoiserModel:
        model = DenoiserModel(cfg).to(dtype)
        model.load_state_dict(self.shadow)
        return model


def latent_stack(materials: list[MaterialMaps]) -> np.ndarray:
    if not materials:
        raise TrainingError("training set is empty")
    res = materials[0].resolution
    if any(m.resolution != res for m in materials):
        raise TrainingError("training materials must share one resolution")
    return np.stack([encode_material(m) for m in materials])


def materials_hash(materials: list[MaterialMaps]) -> str:
    digest = hashlib.sha256()
    for m in materials:
        for arr in (m.diffuse, m.specular, m.roughness, m.normal):
            digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()[:16]


def _to_torch(batch: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))).to(dtype)


def _draw_timesteps(rng: np.random.Generator, batch: int, T: int, stratified: bool) -> np.ndarray:
    """Per-item timesteps, uniform in [1, T].

    Stratified mode spreads the batch across equal t-strata (random
    assignment, random offset within each), which keeps the marginal law
    of every item uniform while cutting the batch-gradient variance that
    the noise-level spread otherwise induces.
    """
    if not stratified:
        return rng.integers(1, T + 1, size=batch)
    offsets = (rng.permutation(batch) + rng.random(batch)) / batch
    return np.minimum((offsets * T).astype(np.int64) + 1, T)


def _render_conditions(
    materials: list[MaterialMaps], variant: str, rng: np.random.Generator, spp: int
) -> np.ndarray:
    stacks = [
        conditions.condition_stack(m, conditions.sample_lighting(variant, rng, spp))
        for m in materials
    ]
    return np.stack(stacks)


def _run_loop(
    model: DenoiserModel,
    cfg: TrainConfig,
    materials: list[MaterialMaps],
    run_dir: Path | None,
    start_step: int = 0,
    optimizer_state: dict | None = None,
    rng_state: dict | None = None,
    ema: EmaTracker | None = None,
    prior_losses: list[float] | None = None,
    callback=None,
    callback_every: int = 0,
) -> TrainResult:
    if cfg.deterministic:
        torch.set_num_threads(1)
    schedule = build_schedule(cfg.schedule_T)
    latents = latent_stack(materials)
    n_items = len(materials)
    total = cfg.total_steps(n_items)
    dtype = next(model.parameters()).dtype

    rng = np.random.default_rng(cfg.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=(0.9, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)
    if ema is None:
        ema = EmaTracker(model, cfg.ema_decay)

    conditional = cfg.variant != "backbone"
    cond_bank: np.ndarray | None = None
    losses: list[float] = list(prior_losses or [])

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        snapshot = {
            "config": asdict(cfg),
            "net": asdict(model.cfg),
            "materials_hash": materials_hash(materials),
            "dataset_size": n_items,
        }
        (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")

    model.train()
    for step in range(start_step, total):
        if conditional and (cond_bank is None or step % cfg.cond_refresh == 0):
            cond_bank = _render_conditions(materials, cfg.variant, rng, cfg.cond_spp)

        idx = rng.integers(0, n_items, size=cfg.batch_size)
        t = _draw_timesteps(rng, cfg.batch_size, cfg.schedule_T, cfg.t_stratified)
        y, v_target = make_training_pair(latents[idx], t, schedule, rng)

        for group in optimizer.param_groups:
            group["lr"] = schedule_lr(cfg, step, total)
        optimizer.zero_grad(set_to_none=True)
        y_t = _to_torch(y, dtype)
        v_t = _to_torch(v_target, dtype)
        cond_t = _to_torch(cond_bank[idx], dtype) if conditional else None
        v_pred = model(y_t, torch.from_numpy(t), cond_t)
        loss = kdiffusion_loss(v_pred, v_t)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite loss at step {step} (items {idx.tolist()}, t {t.tolist()})"
            )
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        ema.update(model)
        losses.append(value)

        if callback is not None and callback_every and (step + 1) % callback_every == 0:
            callback(step + 1, model)
        if run_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            _save_state(run_dir, model, ema, optimizer, rng, step + 1, losses, cfg)

    model.eval()
    ema_model = ema.materialize(model.cfg, dtype)
    ema_model.eval()
    result = TrainResult(model, ema_model, np.asarray(losses), cfg)

    if run_dir is not None:
        _save_state(run_dir, model, ema, optimizer, rng, total, losses, cfg)
        save_weights(model, run_dir / "model.ckpt", {"variant": cfg.variant})
        save_weights(ema_model, run_dir / "ema.ckpt", {"variant": cfg.variant, "ema": True})
        lines = ["step,loss,lr"] + [
            f"{i},{v:.8f},{schedule_lr(cfg, i, total):.3e}" for i, v in enumerate(losses)
        ]
        (run_dir / "losses.csv").write_text("\n".join(lines) + "\n")
    return result


def _save_state(run_dir, model, ema, optimizer, rng, step, losses, cfg) -> None:
    arrays = {f"model.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays.update({f"ema.{k}": v.cpu().numpy() for k, v in ema.shadow.items()})
    for i, (k, state) in enumerate(sorted(optimizer.state_dict()["state"].items())):
        arrays[f"adam.{k}.exp_avg"] = state["exp_avg"].cpu().numpy()
        arrays[f"adam.{k}.exp_avg_sq"] = state["exp_avg_sq"].cpu().numpy()
        arrays[f"adam.{k}.step"] = np.asarray([int(state["step"])], dtype=np.int64)
    arrays["losses"] = np.asarray(losses, dtype=np.float64)
    meta = {
        "step": step,
        "config": asdict(cfg),
        "net": asdict(model.cfg),
        "rng_state": json.loads(json.dumps(rng.bit_generator.state)),
    }
    write_container(Path(run_dir) / "state.ckpt", arrays, meta)


def resume(run_dir, materials: list[MaterialMaps]) -> TrainResult:
    """Continue an interrupted run from its state checkpoint to completion."""
    run_dir = Path(run_dir)
    arrays, meta = read_container(run_dir / "state.ckpt")
    cfg_d = dict(meta["config"])
    cfg = TrainConfig(**cfg_d)
    net_d = dict(meta["net"])
    net_d["channel_mult"] = tuple(net_d["channel_mult"])
    net_d["attention_resolutions"] = tuple(net_d["attention_resolutions"])
    net = NetConfig(**net_d)

    model = DenoiserModel(net)
    model.load_state_dict(
        {k[len("model.") :]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("model.")}
    )
    ema = EmaTracker(model, cfg.ema_decay)
    ema.shadow = {
        k[len("ema.") :]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("ema.")
    }
    # param_groups travel inside the state dict, so the template must match
    # the loop's optimizer construction exactly (betas included)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=(0.9, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )
    opt_state = optimizer.state_dict()
    for key in list(opt_state["state"].keys()):
        del opt_state["state"][key]
    for i, _p in enumerate(model.parameters()):
        prefix = f"adam.{i}."
        if f"{prefix}exp_avg" in arrays:
            opt_state["state"][i] = {
                "step": torch.tensor(float(arrays[f"{prefix}step"][0])),
                "exp_avg": torch.from_numpy(arrays[f"{prefix}exp_avg"].copy()),
                "exp_avg_sq": torch.from_numpy(arrays[f"{prefix}exp_avg_sq"].copy()),
            }
    losses = [float(v) for v in arrays["losses"]]
    return _run_loop(
        model,
        cfg,
        materials,
        run_dir,
        start_step=int(meta["step"]),
        optimizer_state=opt_state,
        rng_state=meta["rng_state"],
        ema=ema,
        prior_losses=losses,
    )


def train_backbone(
    cfg: TrainConfig,
    materials: list[MaterialMaps],
    net: NetConfig | None = None,
    run_dir=None,
) -> TrainResult:
    """Pretrain the unconditional backbone on encoded materials."""
    if cfg.variant != "backbone":
        raise TrainingError(f"train_backbone got variant '{cfg.variant}'")
    if net is None:
        net = NetConfig.desk(resolution=materials[0].resolution)
    if net.cond_channels:
        raise TrainingError("backbone must have no condition channels")
    model = init_backbone(net, seed=cfg.seed)
    return _run_loop(model, cfg, materials, run_dir)


def finetune_conditional(
    backbone: DenoiserModel,
    cfg: TrainConfig,
    materials: list[MaterialMaps],
    run_dir=None,
    callback=None,
    callback_every: int = 0,
) -> TrainResult:
    """Expand the backbone's input head for the variant and finetune.

    At step 0 the conditional loss on any batch equals the backbone loss on
    that batch (zero-init identity). ``callback(step, model)`` fires every
    ``callback_every`` steps (for loss probes and the like).
    """
    if cfg.variant == "backbone":
        raise TrainingError("finetune_conditional needs a conditional variant")
    k = conditions.cond_channels(cfg.variant)
    model = expand_input_head(backbone, k)
    return _run_loop(model, cfg, materials, run_dir, callback=callback, callback_every=callback_every)


def train_conditional_scratch(
    cfg: TrainConfig,
    materials: list[MaterialMaps],
    net: NetConfig | None = None,
    run_dir=None,
) -> TrainResult:
    """Train a conditional model from random init (baseline for finetuning)."""
    if cfg.variant == "backbone":
        raise TrainingError("scratch-conditional training needs a conditional variant")
    k = conditions.cond_channels(cfg.variant)
    if net is None:
        net = NetConfig.desk(resolution=materials[0].resolution, cond_channels=k)
    if net.cond_channels != k:
        raise TrainingError(f"net.cond_channels {net.cond_channels} != variant k {k}")
    model = init_backbone(net, seed=cfg.seed)
    return _run_loop(model, cfg, materials, run_dir)


@dataclass
class EvalPack:
    """Frozen evaluation batch: fixed items, timesteps, noise and conditions."""

    y: torch.Tensor
    v_target: torch.Tensor
    t: torch.Tensor
    cond: torch.Tensor | None


def make_eval_pack(
    materials: list[MaterialMaps],
    variant: str,
    seed: int,
    count: int = 32,
    schedule: NoiseSchedule | None = None,
    spp: int = 32,
) -> EvalPack:
    """Build a fixed probe batch for comparable loss measurements across runs."""
    if schedule is None:
        schedule = build_schedule()
    rng = np.random.default_rng(seed)
    latents = latent_stack(materials)
    idx = rng.integers(0, len(materials), size=count)
    t = rng.integers(1, schedule.T + 1, size=count)
    y, v = make_training_pair(latents[idx], t, schedule, rng)
    cond = None
    if variant != "backbone":
        bank = _render_conditions(materials, variant, rng, spp)
        cond = _to_torch(bank[idx], torch.float32)
    return EvalPack(
        _to_torch(y, torch.float32), _to_torch(v, torch.float32), torch.from_numpy(t), cond
    )


@torch.no_grad()
def probe_loss(model: DenoiserModel, pack: EvalPack) -> float:
    """Velocity MSE of the model on a frozen eval pack."""
    was_training = model.training
    model.eval()
    cond = pack.cond if model.cfg.cond_channels else None
    loss = float(kdiffusion_loss(model(pack.y, pack.t, cond), pack.v_target))
    if was_training:
        model.train()
    return loss
