"""Miniature epsilon-predicting vision models: a conditioned U-Net and a DiT.

Both consume (x_t, t, adapted text encoding, mask) and return a prediction of
the injected noise with the same shape as x_t. Cross-attention uses image
features as queries and the adapted text embeddings as keys/values, with
masked (PAD) key positions excluded.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractViolation
from .layers import Attention, FeedForward, timestep_embedding
from .utils import init_parameters


@dataclass(frozen=True)
class DenoiserConfig:
    kind: str                       # "unet" | "dit"
    base_channels: int = 64         # unet stem width / dit model width
    channel_multipliers: tuple = (1, 2, 4)
    depth: int = 6                  # dit transformer layers
    cross_dim: int = 128            # d_V: adapter output / cross-attn K,V input dim
    num_heads: int = 4
    patch_size: int = 4
    in_channels: int = 3
    resolution: int = 32

    def __post_init__(self):
        if self.kind not in ("unet", "dit"):
            raise ConfigError(f"unknown denoiser kind {self.kind!r}")
        if self.cross_dim % self.num_heads != 0:
            raise ConfigError("cross_dim must be divisible by num_heads")
        if self.kind == "unet":
            down = 2 ** (len(self.channel_multipliers) - 1)
            if self.resolution % down != 0:
                raise ConfigError(
                    f"resolution {self.resolution} not divisible by {down} "
                    f"for {len(self.channel_multipliers)} unet levels"
                )
        if self.kind == "dit" and self.resolution % self.patch_size != 0:
            raise ConfigError("resolution must be divisible by patch_size")


def _groups(c: int) -> int:
    for g in (8, 4, 2):
        if c % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    """GroupNorm/SiLU/conv block with additive time conditioning."""

    def __init__(self, c_in: int, c_out: int, t_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb_proj = nn.Linear(t_dim, c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else None

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class SpatialSelfAttention(nn.Module):
    def __init__(self, c: int, heads: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(c), c)
        self.attn = Attention(c, c, c, heads)

    def forward(self, x):
        b, c, h, w = x.shape
        z = self.norm(x).flatten(2).transpose(1, 2)
        return x + self.attn(z).transpose(1, 2).view(b, c, h, w)


class SpatialCrossAttention(nn.Module):
    """Image-feature queries attending over adapted text keys/values."""

    def __init__(self, c: int, d_cond: int, heads: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(c), c)
        self.attn = Attention(c, d_cond, c, heads)

    def forward(self, x, cond, mask):
        b, c, h, w = x.shape
        z = self.norm(x).flatten(2).transpose(1, 2)
        out = self.attn(z, cond, key_mask=mask)
        return x + out.transpose(1, 2).view(b, c, h, w)


class _Level(nn.Module):
    """Container giving down/up levels stable submodule names."""

    def __init__(self):
        super().__init__()
        self.res = nn.ModuleList()
        self.attn = nn.ModuleList()
        self.cross = nn.ModuleList()


class UNet(nn.Module):
    """Encoder-decoder U-Net with self/cross-attention at the two lowest
    resolutions and time embeddings added inside every ResBlock."""

    NUM_RES = 2

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        super().__init__()
        if config.kind != "unet":
            raise ConfigError("UNet requires kind='unet'")
        self.config = config
        ch = config.base_channels
        mults = tuple(config.channel_multipliers)
        levels = len(mults)
        attn_levels = set(range(max(levels - 2, 0), levels))
        t_dim = 4 * ch
        self.t_dim = t_dim
        self.time_in = nn.Linear(ch, t_dim)
        self.time_out = nn.Linear(t_dim, t_dim)
        self.stem = nn.Conv2d(config.in_channels, ch, 3, padding=1)

        def make_attns(level, c, count):
            if level in attn_levels:
                return (
                    nn.ModuleList(SpatialSelfAttention(c, config.num_heads) for _ in range(count)),
                    nn.ModuleList(
                        SpatialCrossAttention(c, config.cross_dim, config.num_heads)
                        for _ in range(count)
                    ),
                )
            return nn.ModuleList(), nn.ModuleList()

        self.downs = nn.ModuleList()
        self.pools = nn.ModuleList()
        skip_chs = [ch]
        c_prev = ch
        for i, m in enumerate(mults):
            c_out = ch * m
            level = _Level()
            for _ in range(self.NUM_RES):
                level.res.append(ResBlock(c_prev, c_out, t_dim))
                c_prev = c_out
                skip_chs.append(c_out)
            level.attn, level.cross = make_attns(i, c_out, self.NUM_RES)
            self.downs.append(level)
            if i < levels - 1:
                self.pools.append(nn.Conv2d(c_out, c_out, 3, stride=2, padding=1))
                skip_chs.append(c_out)

        c_mid = ch * mults[-1]
        self.mid_res1 = ResBlock(c_mid, c_mid, t_dim)
        self.mid_attn = SpatialSelfAttention(c_mid, config.num_heads)
        self.mid_cross = SpatialCrossAttention(c_mid, config.cross_dim, config.num_heads)
        self.mid_res2 = ResBlock(c_mid, c_mid, t_dim)

        self.ups = nn.ModuleList()
        self.unpools = nn.ModuleList()
        c_prev = c_mid
        for i in reversed(range(levels)):
            c_out = ch * mults[i]
            level = _Level()
            for _ in range(self.NUM_RES + 1):
                level.res.append(ResBlock(c_prev + skip_chs.pop(), c_out, t_dim))
                c_prev = c_out
            level.attn, level.cross = make_attns(i, c_out, self.NUM_RES + 1)
            self.ups.append(level)
            if i > 0:
                self.unpools.append(nn.Conv2d(c_out, c_out, 3, padding=1))

        self.out_norm = nn.GroupNorm(_groups(ch), ch)
        self.out_conv = nn.Conv2d(ch, config.in_channels, 3, padding=1)
        init_parameters(self, seed)

    @property
    def cross_dim(self):
        return self.config.cross_dim

    def forward(self, x_t, t, cond, mask=None):
        cfg = self.config
        if x_t.shape[1:] != (cfg.in_channels, cfg.resolution, cfg.resolution):
            raise ContractViolation(
                f"input shape {tuple(x_t.shape)} does not match config resolution "
                f"{cfg.resolution}"
            )
        temb = timestep_embedding(t, cfg.base_channels, dtype=x_t.dtype)
        if temb.dim() == 1:
            temb = temb[None].expand(x_t.shape[0], -1)
        temb = self.time_out(F.silu(self.time_in(temb)))

        hs = [self.stem(x_t)]
        for i, level in enumerate(self.downs):
            h = hs[-1]
            for j, res in enumerate(level.res):
                h = res(h, temb)
                if level.attn:
                    h = level.attn[j](h)
                    h = level.cross[j](h, cond, mask)
                hs.append(h)
            if i < len(self.downs) - 1:
                hs.append(self.pools[i](hs[-1]))

        h = self.mid_res1(hs[-1], temb)
        h = self.mid_attn(h)
        h = self.mid_cross(h, cond, mask)
        h = self.mid_res2(h, temb)

        for k, level in enumerate(self.ups):
            for j, res in enumerate(level.res):
                h = res(torch.cat([h, hs.pop()], dim=1), temb)
                if level.attn:
                    h = level.attn[j](h)
                    h = level.cross[j](h, cond, mask)
            if k < len(self.unpools):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.unpools[k](h)
        return self.out_conv(F.silu(self.out_norm(h)))


def patchify(x: torch.Tensor, p: int) -> torch.Tensor:
    """[B,C,H,W] -> [B, (H/p)(W/p), C*p*p] in row-major patch order."""
    b, c, h, w = x.shape
    if h % p or w % p:
        raise ContractViolation(f"spatial dims {(h, w)} not divisible by patch {p}")
    x = x.view(b, c, h // p, p, w // p, p)
    return x.permute(0, 2, 4, 1, 3, 5).reshape(b, (h // p) * (w // p), c * p * p)


def unpatchify(tokens: torch.Tensor, p: int, c: int, h: int, w: int) -> torch.Tensor:
    """Inverse of patchify."""
    b = tokens.shape[0]
    x = tokens.view(b, h // p, w // p, c, p, p)
    return x.permute(0, 3, 1, 4, 2, 5).reshape(b, c, h, w)


class DiTBlock(nn.Module):
    def __init__(self, d: int, d_cond: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = Attention(d, d, d, heads)
        self.norm2 = nn.LayerNorm(d)
        self.cross = Attention(d, d_cond, d, heads)
        self.norm3 = nn.LayerNorm(d)
        self.ff = FeedForward(d, 4 * d)

    def forward(self, x, cond, mask):
        x = x + self.attn(self.norm1(x))
        x = x + self.cross(self.norm2(x), cond, key_mask=mask)
        return x + self.ff(self.norm3(x))


class DiT(nn.Module):
    """Patchified transformer denoiser with additive time conditioning."""

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        super().__init__()
        if config.kind != "dit":
            raise ConfigError("DiT requires kind='dit'")
        self.config = config
        d, p = config.base_channels, config.patch_size
        n_tokens = (config.resolution // p) ** 2
        self.patch_in = nn.Linear(config.in_channels * p * p, d)
        self.pos_emb = nn.Parameter(torch.zeros(1, n_tokens, d))
        self.time_in = nn.Linear(d, 4 * d)
        self.time_out = nn.Linear(4 * d, d)
        self.blocks = nn.ModuleList(
            DiTBlock(d, config.cross_dim, config.num_heads) for _ in range(config.depth)
        )
        self.final_norm = nn.LayerNorm(d)
        self.patch_out = nn.Linear(d, config.in_channels * p * p)
        init_parameters(self, seed)

    @property
    def cross_dim(self):
        return self.config.cross_dim

    def forward(self, x_t, t, cond, mask=None):
        cfg = self.config
        if x_t.shape[-1] % cfg.patch_size or x_t.shape[-2] % cfg.patch_size:
            raise ContractViolation("input resolution not divisible by patch size")
        temb = timestep_embedding(t, cfg.base_channels, dtype=x_t.dtype)
        if temb.dim() == 1:
            temb = temb[None].expand(x_t.shape[0], -1)
        temb = self.time_out(F.silu(self.time_in(temb)))
        x = self.patch_in(patchify(x_t, cfg.patch_size)) + self.pos_emb
        x = x + temb[:, None, :]
        for block in self.blocks:
            x = block(x, cond, mask)
        x = self.patch_out(self.final_norm(x))
        return unpatchify(x, cfg.patch_size, cfg.in_channels,
                          x_t.shape[-2], x_t.shape[-1])


VISION_PRESETS = {
    "unet-small": DenoiserConfig(kind="unet", base_channels=32,
                                 channel_multipliers=(1, 2, 4), cross_dim=96, num_heads=4),
    "unet-base": DenoiserConfig(kind="unet", base_channels=64,
                                channel_multipliers=(1, 2, 4), cross_dim=128, num_heads=4),
    "dit-base": DenoiserConfig(kind="dit", base_channels=128, depth=6,
                               patch_size=4, cross_dim=128, num_heads=4),
}


def build_denoiser(preset: str, resolution: int = 32, seed: int = 0):
    if preset not in VISION_PRESETS:
        raise ConfigError(f"unknown vision preset {preset!r}; have {sorted(VISION_PRESETS)}")
    base = VISION_PRESETS[preset]
    cfg_kwargs = {f: getattr(base, f) for f in base.__dataclass_fields__}
    cfg_kwargs["resolution"] = resolution
    config = DenoiserConfig(**cfg_kwargs)
    cls = UNet if config.kind == "unet" else DiT
    return cls(config, seed=seed)
