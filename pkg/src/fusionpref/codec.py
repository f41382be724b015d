"""Image <-> latent codecs.

Two variants stand in for a pretrained VAE:

* ``PatchifyCodec`` — exact space-to-depth rearrangement. Lossless and
  training-free; the default everywhere.
* ``TinyAutoencoder`` — a small convolutional autoencoder trained with an
  L1 reconstruction loss, for fidelity-realistic experiments.

Images are channel-first float tensors in [0, 1]; latents are channel-first
with spatial dims divided by the codec factor.
"""

from __future__ import annotations

from typing import Iterable, Protocol

import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "CodecError",
    "Codec",
    "PatchifyCodec",
    "TinyAutoencoder",
    "train_autoencoder",
    "concat_sources",
]


class CodecError(ValueError):
    """Shape inconsistent with the codec."""


class Codec(Protocol):
    factor: int

    def encode(self, image: torch.Tensor) -> torch.Tensor: ...

    def decode(self, latent: torch.Tensor) -> torch.Tensor: ...

    def latent_channels(self, image_channels: int) -> int: ...


def _check_divisible(image: torch.Tensor, factor: int) -> None:
    h, w = image.shape[-2], image.shape[-1]
    if h % factor or w % factor:
        raise CodecError(f"spatial dims {h}x{w} not divisible by factor {factor}")


class PatchifyCodec:
    """Lossless space-to-depth codec; encode/decode are exact inverses."""

    def __init__(self, factor: int = 4):
        if factor < 1 or factor & (factor - 1):
            raise CodecError(f"factor must be a power of two, got {factor}")
        self.factor = factor

    def latent_channels(self, image_channels: int) -> int:
        return image_channels * self.factor * self.factor

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        _check_divisible(image, self.factor)
        return F.pixel_unshuffle(image, self.factor)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        c = latent.shape[-3]
        if c % (self.factor * self.factor):
            raise CodecError(
                f"latent channels {c} not a multiple of factor^2 = {self.factor ** 2}"
            )
        return F.pixel_shuffle(latent, self.factor).clamp(0.0, 1.0)


class TinyAutoencoder(nn.Module):
    """2-down / 2-up convolutional autoencoder (overall factor 4)."""

    factor = 4

    def __init__(self, image_channels: int = 1, width: int = 32, z_channels: int = 8):
        super().__init__()
        self.image_channels = image_channels
        self.width = width
        self.z_channels = z_channels
        c = width
        self.enc = nn.Sequential(
            nn.Conv2d(image_channels, c, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(c, c * 2, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(c * 2, z_channels, 3, padding=1),
        )
        self.dec = nn.Sequential(
            nn.Conv2d(z_channels, c * 2, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(c * 2, c, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(c, c, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(c, image_channels, 3, padding=1),
        )

    def latent_channels(self, image_channels: int) -> int:
        if image_channels != self.image_channels:
            raise CodecError(
                f"autoencoder trained for {self.image_channels} channels, got {image_channels}"
            )
        return self.z_channels

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        _check_divisible(image, self.factor)
        squeeze = image.dim() == 3
        x = image.unsqueeze(0) if squeeze else image
        z = self.enc(x)
        return z.squeeze(0) if squeeze else z

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        squeeze = latent.dim() == 3
        z = latent.unsqueeze(0) if squeeze else latent
        x = self.dec(z).clamp(0.0, 1.0)
        return x.squeeze(0) if squeeze else x


def train_autoencoder(
    images: Iterable[torch.Tensor],
    model: TinyAutoencoder,
    epochs: int = 20,
    lr: float = 1e-3,
    batch_size: int = 16,
    seed: int = 0,
) -> float:
    """L1-train the autoencoder in place; returns final mean reconstruction MAE."""
    gen = torch.Generator().manual_seed(seed)
    data = torch.stack([im if im.dim() == 3 else im.unsqueeze(0) for im in images])
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    model.train()
    for _ in range(epochs):
        perm = torch.randperm(data.shape[0], generator=gen)
        for i in range(0, data.shape[0], batch_size):
            batch = data[perm[i : i + batch_size]]
            recon = model.dec(model.enc(batch))
            loss = (recon - batch).abs().mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    with torch.no_grad():
        mae = (model.dec(model.enc(data)).clamp(0, 1) - data).abs().mean().item()
    return mae


def concat_sources(z_ir: torch.Tensor, z_vis: torch.Tensor) -> torch.Tensor:
    """Channel-concatenate the two source latents, infrared first."""
    if z_ir.shape[-2:] != z_vis.shape[-2:]:
        raise CodecError(
            f"spatial mismatch {tuple(z_ir.shape[-2:])} vs {tuple(z_vis.shape[-2:])}"
        )
    return torch.cat([z_ir, z_vis], dim=-3)
