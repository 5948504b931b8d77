"""The U-Net velocity predictor.

An encoder/decoder over ``levels`` resolutions with ConvNeXt-style blocks
(or single-convolution residual blocks for the ablation toggle, sized for
parameter parity at equal width), self-attention at selected resolutions
and the bottleneck, and a Fourier time embedding passed to every block as
a per-channel bias after the depth-wise convolution.

Conditioning expands the input head: a backbone trained with 10 input
channels grows to 10 + k, with the new kernel slices (and nothing else)
zero-initialized, so the expanded model is bit-for-bit identical to the
backbone for any condition until finetuning moves the weights.

All parameters are drawn from a seeded numpy generator with Gaussian
fan-in scaling (the final output projection starts at zero so the initial
velocity prediction is 0), which makes initialization reproducible
independent of torch's global RNG state.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .container import read_container, write_container

LATENT_CHANNELS = 10


class DenoiserConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    resolution: int = 32
    levels: int = 3
    width: int = 32
    channel_mult: tuple[int, ...] = (1, 2, 4)
    blocks_per_level: int = 1
    block_type: str = "convnext"  # convnext | residual
    attention_resolutions: tuple[int, ...] = (8,)
    heads: int = 4
    groups: int = 8
    time_embed_width: int = 128
    cond_channels: int = 0  # k = 3N (+3 with a view-vector map)

    def __post_init__(self):
        if self.block_type not in ("convnext", "residual"):
            raise DenoiserConfigError(f"unknown block type '{self.block_type}'")
        if len(self.channel_mult) != self.levels:
            raise DenoiserConfigError("channel_mult must have one entry per level")
        if self.resolution % (2 ** (self.levels - 1)):
            raise DenoiserConfigError(
                f"resolution {self.resolution} not divisible by 2^{self.levels - 1}"
            )
        level_res = {self.resolution >> i for i in range(self.levels)}
        if not set(self.attention_resolutions) <= level_res:
            raise DenoiserConfigError(
                f"attention resolutions {self.attention_resolutions} not a subset "
                f"of the U-Net resolutions {sorted(level_res)}"
            )
        for mult in self.channel_mult:
            if (self.width * mult) % self.groups:
                raise DenoiserConfigError("every level width must be divisible by groups")
        if self.cond_channels < 0:
            raise DenoiserConfigError("cond_channels must be >= 0")

    @staticmethod
    def desk(resolution: int = 32, cond_channels: int = 0, block_type: str = "convnext") -> "NetConfig":
        return NetConfig(resolution=resolution, cond_channels=cond_channels, block_type=block_type)

    @staticmethod
    def paper(cond_channels: int = 0) -> "NetConfig":
        return NetConfig(
            resolution=256,
            levels=6,
            width=128,
            channel_mult=(1, 1, 2, 2, 4, 4),
            blocks_per_level=2,
            attention_resolutions=(32, 16),
            heads=8,
            groups=32,
            time_embed_width=512,
            cond_channels=cond_channels,
        )

    def with_condition(self, k: int) -> "NetConfig":
        return NetConfig(**{**asdict(self), "cond_channels": k})


def fourier_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sin/cos features of the timestep at geometrically spaced frequencies."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    ).to(t.device)
    angles = t.double()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class ConvNeXtBlock(nn.Module):
    """Depth-wise 7x7 -> (+time bias) -> group norm -> 1x1 expand (4x) ->
    GELU -> 1x1 contract, around a residual shortcut."""

    def __init__(self, cin: int, cout: int, time_width: int, groups: int):
        super().__init__()
        self.dw = nn.Conv2d(cin, cin, 7, padding=3, groups=cin)
        self.time_proj = nn.Linear(time_width, cin)
        self.norm = nn.GroupNorm(groups, cin)
        self.pw1 = nn.Conv2d(cin, 4 * cout, 1)
        self.act = nn.GELU()
        self.pw2 = nn.Conv2d(4 * cout, cout, 1)
        self.shortcut = nn.Identity() if cin == cout else nn.Conv2d(cin, cout, 1)

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.dw(x) + self.time_proj(temb)[:, :, None, None]
        h = self.pw2(self.act(self.pw1(self.norm(h))))
        return self.shortcut(x) + h


class ResidualBlock(nn.Module):
    """Single 3x3 convolution block (ablation arm), parameter-matched to the
    ConvNeXt block at equal width."""

    def __init__(self, cin: int, cout: int, time_width: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, cin)
        self.act = nn.SiLU()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.time_proj = nn.Linear(time_width, cout)
        self.shortcut = nn.Identity() if cin == cout else nn.Conv2d(cin, cout, 1)

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv(self.act(self.norm(x))) + self.time_proj(temb)[:, :, None, None]
        return self.shortcut(x) + h


class SelfAttention(nn.Module):
    def __init__(self, channels: int, heads: int, groups: int):
        super().__init__()
        if channels % heads:
            raise DenoiserConfigError(f"channels {channels} not divisible by {heads} heads")
        self.heads = heads
        self.norm = nn.GroupNorm(groups, channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        qkv = self.qkv(self.norm(x)).reshape(b, 3, self.heads, c // self.heads, h * w)
        q, k, v = qkv.unbind(dim=1)
        attn = torch.softmax(q.transpose(-2, -1) @ k / math.sqrt(c // self.heads), dim=-1)
        out = (v @ attn.transpose(-2, -1)).reshape(b, c, h, w)
        return x + self.proj(out)


_BLOCKS = {"convnext": ConvNeXtBlock, "residual": ResidualBlock}


class DenoiserModel(nn.Module):
    """D(y, t, condition) -> velocity estimate with the same spatial shape."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        block = _BLOCKS[cfg.block_type]
        tw = cfg.time_embed_width
        self.fourier_dim = cfg.width
        self.time_mlp = nn.Sequential(
            nn.Linear(self.fourier_dim, tw), nn.SiLU(), nn.Linear(tw, tw)
        )
        widths = [cfg.width * m for m in cfg.channel_mult]

        self.input_head = nn.Conv2d(LATENT_CHANNELS + cfg.cond_channels, widths[0], 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.enc_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        skip_widths = [widths[0]]
        res = cfg.resolution
        cur = widths[0]
        for lvl, w in enumerate(widths):
            for _ in range(cfg.blocks_per_level):
                self.enc_blocks.append(block(cur, w, tw, cfg.groups))
                self.enc_attn.append(
                    SelfAttention(w, cfg.heads, cfg.groups)
                    if res in cfg.attention_resolutions
                    else None
                )
                cur = w
                skip_widths.append(cur)
            if lvl < cfg.levels - 1:
                self.downs.append(nn.Conv2d(cur, cur, 3, stride=2, padding=1))
                skip_widths.append(cur)
                res //= 2

        self.mid_block1 = block(cur, cur, tw, cfg.groups)
        self.mid_attn = SelfAttention(cur, cfg.heads, cfg.groups)
        self.mid_block2 = block(cur, cur, tw, cfg.groups)

        self.dec_blocks = nn.ModuleList()
        self.dec_attn = nn.ModuleList()
        self.ups = nn.ModuleList()
        for lvl in reversed(range(cfg.levels)):
            w = widths[lvl]
            for _ in range(cfg.blocks_per_level + 1):
                self.dec_blocks.append(block(cur + skip_widths.pop(), w, tw, cfg.groups))
                self.dec_attn.append(
                    SelfAttention(w, cfg.heads, cfg.groups)
                    if res in cfg.attention_resolutions
                    else None
                )
                cur = w
            if lvl > 0:
                self.ups.append(nn.Conv2d(cur, cur, 3, padding=1))
                res *= 2

        self.out_norm = nn.GroupNorm(cfg.groups, cur)
        self.out_act = nn.SiLU()
        self.out_conv = nn.Conv2d(cur, LATENT_CHANNELS, 3, padding=1)

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        """Fourier features of t through the 2-layer MLP (time_embed_width)."""
        feats = fourier_features(t, self.fourier_dim).to(next(self.parameters()).dtype)
        return self.time_mlp(feats)

    def forward(
        self, y: torch.Tensor, t: torch.Tensor, cond: torch.Tensor | None = None
    ) -> torch.Tensor:
        cfg = self.cfg
        if y.shape[-1] % (2 ** (cfg.levels - 1)):
            raise DenoiserConfigError(
                f"input resolution {y.shape[-1]} not divisible by 2^{cfg.levels - 1}"
            )
        if (cond is not None) != (cfg.cond_channels > 0):
            raise DenoiserConfigError(
                "condition must be provided exactly when the model has condition channels"
            )
        if cond is not None:
            y = torch.cat([y, cond], dim=1)
        temb = self.time_embedding(t)

        h = self.input_head(y)
        skips = [h]
        blocks = iter(zip(self.enc_blocks, self.enc_attn))
        downs = iter(self.downs)
        for lvl in range(cfg.levels):
            for _ in range(cfg.blocks_per_level):
                blk, attn = next(blocks)
                h = blk(h, temb)
                if attn is not None:
                    h = attn(h)
                skips.append(h)
            if lvl < cfg.levels - 1:
                h = next(downs)(h)
                skips.append(h)

        h = self.mid_block1(h, temb)
        h = self.mid_attn(h)
        h = self.mid_block2(h, temb)

        blocks = iter(zip(self.dec_blocks, self.dec_attn))
        ups = iter(self.ups)
        for lvl in reversed(range(cfg.levels)):
            for _ in range(cfg.blocks_per_level + 1):
                blk, attn = next(blocks)
                h = blk(torch.cat([h, skips.pop()], dim=1), temb)
                if attn is not None:
                    h = attn(h)
            if lvl > 0:
                h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
                h = next(ups)(h)

        return self.out_conv(self.out_act(self.out_norm(h)))

    # -- numpy-facing helpers -------------------------------------------------

    @torch.no_grad()
    def velocity(self, y: np.ndarray, t: int, cond: np.ndarray | None = None) -> np.ndarray:
        """Single-image (H, W, C) numpy wrapper around forward()."""
        dtype = next(self.parameters()).dtype
        yt = torch.from_numpy(np.ascontiguousarray(y.transpose(2, 0, 1))[None]).to(dtype)
        ct = None
        if cond is not None:
            ct = torch.from_numpy(np.ascontiguousarray(cond.transpose(2, 0, 1))[None]).to(dtype)
        was_training = self.training
        self.eval()
        out = self.forward(yt, torch.tensor([t]), ct)
        if was_training:
            self.train()
        return out[0].numpy().transpose(1, 2, 0).astype(np.float64)


def init_backbone(cfg: NetConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> DenoiserModel:
    """Build and initialize a model deterministically from the seed.

    Weights are N(0, 1/fan_in), biases zero, norm layers identity; the final
    output projection is zeroed so the untrained model predicts velocity 0.
    """
    model = DenoiserModel(cfg).to(dtype)
    rng = np.random.default_rng(seed)
    for name, p in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if name.startswith("out_conv."):
                p.zero_()
            elif name.endswith(".bias"):
                p.zero_()
            elif p.dim() == 1:  # norm gains
                p.fill_(1.0)
            else:
                fan_in = p[0].numel()
                vals = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals).to(dtype))
    return model


def expand_input_head(model: DenoiserModel, k: int) -> DenoiserModel:
    """Grow the input head by k zero-initialized condition channels.

    Every other weight is copied, so forward(expanded, y, t, cond) equals
    forward(backbone, y, t) exactly for any condition at initialization.
    """
    if k <= 0:
        raise DenoiserConfigError(f"condition channel count must be positive, got {k}")
    if model.cfg.cond_channels:
        raise DenoiserConfigError("input head was already expanded")
    new_cfg = model.cfg.with_condition(k)
    new_model = DenoiserModel(new_cfg).to(next(model.parameters()).dtype)
    state = model.state_dict()
    new_state = new_model.state_dict()
    for name, tensor in state.items():
        if name == "input_head.weight":
            grown = torch.zeros_like(new_state[name])
            grown[:, :LATENT_CHANNELS] = tensor
            new_state[name] = grown
        else:
            new_state[name] = tensor.clone()
    new_model.load_state_dict(new_state)
    return new_model


def save_weights(model: DenoiserModel, path, meta: dict | None = None) -> None:
    arrays = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    header = {"config": asdict(model.cfg), "dtype": str(next(model.parameters()).dtype)}
    if meta:
        header.update(meta)
    write_container(path, arrays, header)


def load_weights(path) -> DenoiserModel:
    arrays, meta = read_container(path)
    cfg_dict = dict(meta["config"])
    cfg_dict["channel_mult"] = tuple(cfg_dict["channel_mult"])
    cfg_dict["attention_resolutions"] = tuple(cfg_dict["attention_resolutions"])
    cfg = NetConfig(**cfg_dict)
    dtype = torch.float64 if meta.get("dtype") == "torch.float64" else torch.float32
    model = DenoiserModel(cfg).to(dtype)
    state = {name: torch.from_numpy(arr).to(dtype) for name, arr in arrays.items()}
    model.load_state_dict(state)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
