"""Conditional denoiser: a small U-Net with sinusoidal timestep embedding and
one bottleneck cross-attention block attending to a learned prompt embedding.

Prompts are discrete: one general fusion token plus N ordinal property-level
tokens, each with a learned embedding row. All conditioning other than the
timestep flows through channel concatenation (source latents) or the
cross-attention block (prompt).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "PropertyPrompt",
    "PromptEmbeddingTable",
    "Conditioning",
    "CrossAttentionBlock",
    "ConditionalDenoiser",
    "timestep_embedding",
]


@dataclass(frozen=True)
class PropertyPrompt:
    """Discrete conditioning token: general fusion or one of N property levels."""

    kind: str  # "general" | "property"
    level: int = 0
    n_levels: int = 5

    def __post_init__(self):
        if self.kind not in ("general", "property"):
            raise ValueError(f"unknown prompt kind {self.kind!r}")
        if self.n_levels < 2:
            raise ValueError(f"n_levels must be >= 2, got {self.n_levels}")
        if self.kind == "property" and not 0 <= self.level < self.n_levels:
            raise ValueError(f"level {self.level} outside [0, {self.n_levels})")

    @property
    def index(self) -> int:
        """Embedding-table row: levels occupy [0, N), the general token row N."""
        return self.level if self.kind == "property" else self.n_levels

    @property
    def name(self) -> str:
        return "general" if self.kind == "general" else f"level{self.level}"

    @staticmethod
    def general(n_levels: int = 5) -> "PropertyPrompt":
        return PropertyPrompt("general", 0, n_levels)

    @staticmethod
    def property_level(level: int, n_levels: int = 5) -> "PropertyPrompt":
        return PropertyPrompt("property", level, n_levels)


class PromptEmbeddingTable(nn.Module):
    """N+1 learned embedding rows: one per property level plus the general token."""

    def __init__(self, n_levels: int = 5, dim: int = 64):
        super().__init__()
        self.n_levels = n_levels
        self.dim = dim
        self.table = nn.Embedding(n_levels + 1, dim)

    def forward(self, prompt: PropertyPrompt, batch: int = 1) -> torch.Tensor:
        idx = torch.full((batch,), prompt.index, dtype=torch.long)
        return self.table(idx)


@dataclass
class Conditioning:
    """Bundle of non-timestep conditioning passed through the samplers."""

    z_c: torch.Tensor
    prompt_emb: torch.Tensor | None = None


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Standard sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    return emb.to(torch.get_default_dtype())


class CrossAttentionBlock(nn.Module):
    """Single-head cross-attention from spatial features to prompt tokens.

    The output projection is zero-initialized, so the block is the identity
    at initialization and conditioning switches on only as it trains.
    """

    def __init__(self, channels: int, prompt_dim: int):
        super().__init__()
        self.channels = channels
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(prompt_dim, channels)
        self.to_v = nn.Linear(prompt_dim, channels)
        self.proj = nn.Linear(channels, channels)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def attention_weights(self, features: torch.Tensor, prompt_emb: torch.Tensor) -> torch.Tensor:
        """(B, HW, L) softmax weights; exposed for normalization checks."""
        q = self.to_q(features)
        k = self.to_k(prompt_emb)
        return torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.channels), dim=-1)

    def forward(self, x: torch.Tensor, prompt_emb: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        if prompt_emb.dim() == 2:
            prompt_emb = prompt_emb[:, None, :]  # sequence length 1
        feats = x.flatten(2).transpose(1, 2)  # (B, HW, C)
        attn = self.attention_weights(feats, prompt_emb)
        out = attn @ self.to_v(prompt_emb)
        out = self.proj(out)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class _ResBlockT(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb = nn.Linear(temb_dim, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(x))
        h = h + self.temb(temb)[:, :, None, None]
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class ConditionalDenoiser(nn.Module):
    """Two-resolution U-Net predicting the noise from (z_t, z_c, prompt, t)."""

    def __init__(
        self,
        latent_channels: int,
        cond_channels: int,
        base_width: int = 32,
        channel_mults: tuple[int, ...] = (1, 2),
        prompt_dim: int = 64,
        n_levels: int = 5,
    ):
        super().__init__()
        if len(channel_mults) != 2:
            raise ValueError("this desk-scale U-Net uses exactly two resolutions")
        self.latent_channels = latent_channels
        self.cond_channels = cond_channels
        self.base_width = base_width
        self.channel_mults = tuple(channel_mults)
        self.prompt_dim = prompt_dim
        self.n_levels = n_levels

        c1 = base_width * channel_mults[0]
        c2 = base_width * channel_mults[1]
        temb_dim = base_width * 4
        self.temb_proj = nn.Sequential(
            nn.Linear(base_width, temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim)
        )
        self.prompts = PromptEmbeddingTable(n_levels, prompt_dim)
        self.in_conv = nn.Conv2d(latent_channels + cond_channels, c1, 3, padding=1)
        self.down1 = _ResBlockT(c1, c1, temb_dim)
        self.downsample = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.mid1 = _ResBlockT(c2, c2, temb_dim)
        self.attn = CrossAttentionBlock(c2, prompt_dim)
        self.mid2 = _ResBlockT(c2, c2, temb_dim)
        self.upsample = nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1)
        self.up1 = _ResBlockT(2 * c1, c1, temb_dim)
        self.out_conv = nn.Conv2d(c1, latent_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def embed_prompt(self, prompt: PropertyPrompt, batch: int = 1) -> torch.Tensor:
        return self.prompts(prompt, batch)

    def forward(self, z_t: torch.Tensor, cond: Conditioning, t) -> torch.Tensor:
        if z_t.dim() != 4:
            raise ValueError(f"expected batched (B, C, h, w) input, got {tuple(z_t.shape)}")
        b = z_t.shape[0]
        z_c = cond.z_c
        if z_c.dim() == 3:
            z_c = z_c.unsqueeze(0).expand(b, -1, -1, -1)
        if z_c.shape[-2:] != z_t.shape[-2:]:
            raise ValueError(
                f"z_c spatial {tuple(z_c.shape[-2:])} != z_t spatial {tuple(z_t.shape[-2:])}"
            )
        prompt_emb = cond.prompt_emb
        if prompt_emb is None:
            prompt_emb = self.embed_prompt(PropertyPrompt.general(self.n_levels), b)
        prompt_emb = prompt_emb.to(z_t.dtype)
        if prompt_emb.dim() == 1:
            prompt_emb = prompt_emb[None, :].expand(b, -1)
        if not torch.is_tensor(t):
            t = torch.full((b,), int(t), dtype=torch.long)
        temb = self.temb_proj(timestep_embedding(t, self.base_width).to(z_t.dtype))

        h1 = self.down1(self.in_conv(torch.cat([z_t, z_c], dim=1)), temb)
        h = self.mid1(self.downsample(h1), temb)
        h = self.attn(h, prompt_emb)
        h = self.mid2(h, temb)
        h = self.up1(torch.cat([self.upsample(h), h1], dim=1), temb)
        return self.out_conv(F.silu(h))

    def arch(self) -> dict:
        return {
            "latent_channels": self.latent_channels,
            "cond_channels": self.cond_channels,
            "base_width": self.base_width,
            "channel_mults": list(self.channel_mults),
            "prompt_dim": self.prompt_dim,
            "n_levels": self.n_levels,
        }
