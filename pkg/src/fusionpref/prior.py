"""Prior latent fusion network and the Sobel-max fusion loss.

The network maps the channel-concatenated source latents to a fused latent.
Training decodes to pixels and minimizes an intensity term against the
elementwise max of the sources plus a gradient term against the max of their
Sobel magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .codec import Codec, concat_sources
from .corpus import ImagePair

__all__ = [
    "PriorFusionNet",
    "fuse_prior",
    "sobel_gradient",
    "fusion_loss",
    "PriorTrainConfig",
    "train_prior",
]

# 3x3 Sobel kernels, 1/8 normalization: a unit-slope ramp yields unit response.
_SOBEL_X = torch.tensor(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
) / 8.0
_SOBEL_Y = _SOBEL_X.T.contiguous()


class _ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        h = self.conv2(F.silu(self.conv1(F.silu(x))))
        return x + h


class PriorFusionNet(nn.Module):
    """Small residual CNN: z_c (2k channels) -> z_fusion (k channels).

    The head is zero-initialized, so the untrained network outputs the mean
    of the two source latents.
    """

    def __init__(self, latent_channels: int, width: int = 48, blocks: int = 4):
        super().__init__()
        self.latent_channels = latent_channels
        self.width = width
        self.blocks = blocks
        self.stem = nn.Conv2d(2 * latent_channels, width, 3, padding=1)
        self.body = nn.Sequential(*[_ResBlock(width) for _ in range(blocks)])
        self.head = nn.Conv2d(width, latent_channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, z_c: torch.Tensor) -> torch.Tensor:
        if z_c.shape[-3] != 2 * self.latent_channels:
            raise ValueError(
                f"expected {2 * self.latent_channels} input channels, got {z_c.shape[-3]}"
            )
        z_ir, z_vis = z_c.split(self.latent_channels, dim=-3)
        base = 0.5 * (z_ir + z_vis)
        squeeze = z_c.dim() == 3
        x = z_c.unsqueeze(0) if squeeze else z_c
        h = self.head(self.body(self.stem(x)))
        if squeeze:
            h = h.squeeze(0)
        return base + h

    def arch(self) -> dict:
        return {
            "latent_channels": self.latent_channels,
            "width": self.width,
            "blocks": self.blocks,
        }


def fuse_prior(model: PriorFusionNet, z_c: torch.Tensor) -> torch.Tensor:
    """Evaluate the fusion network deterministically (eval mode, no grad)."""
    model.eval()
    with torch.no_grad():
        return model(z_c)


def sobel_gradient(image: torch.Tensor) -> torch.Tensor:
    """Per-channel Sobel gradient magnitude with replicate padding."""
    squeeze = image.dim() == 2
    x = image[None, None] if squeeze else image
    if x.dim() == 3:
        x = x.unsqueeze(0)
        batched = False
    else:
        batched = True
    c = x.shape[1]
    kx = _SOBEL_X.to(x.dtype).expand(c, 1, 3, 3)
    ky = _SOBEL_Y.to(x.dtype).expand(c, 1, 3, 3)
    xp = F.pad(x, (1, 1, 1, 1), mode="replicate")
    gx = F.conv2d(xp, kx, groups=c)
    gy = F.conv2d(xp, ky, groups=c)
    mag = torch.sqrt(gx * gx + gy * gy + 1e-12)
    if squeeze:
        return mag[0, 0]
    return mag if batched else mag.squeeze(0)


def fusion_loss(
    ir: torch.Tensor,
    vis: torch.Tensor,
    fused: torch.Tensor,
    sigma1: float = 4.0,
    sigma2: float = 10.0,
) -> torch.Tensor:
    """Mean over pixels of the intensity-max and gradient-max absolute errors."""
    if not (ir.shape == vis.shape == fused.shape):
        raise ValueError(
            f"shape mismatch: {tuple(ir.shape)}, {tuple(vis.shape)}, {tuple(fused.shape)}"
        )
    if sigma1 < 0 or sigma2 < 0:
        raise ValueError("sigma1 and sigma2 must be >= 0")
    intensity = (torch.maximum(ir, vis) - fused).abs().mean()
    grad = (torch.maximum(sobel_gradient(ir), sobel_gradient(vis)) - sobel_gradient(fused)).abs().mean()
    return sigma1 * intensity + sigma2 * grad


@dataclass
class PriorTrainConfig:
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 8
    sigma1: float = 4.0
    sigma2: float = 10.0
    seed: int = 0
    width: int = 48
    blocks: int = 4
    target_improvement: float = 10.0
    holdout_fraction: float = 0.1


@dataclass
class PriorTrainResult:
    model: PriorFusionNet
    initial_loss: float
    best_loss: float
    converged: bool
    history: list[float] = field(default_factory=list)


def train_prior(
    corpus: list[ImagePair], codec: Codec, config: PriorTrainConfig | None = None
) -> PriorTrainResult:
    """Train the prior fusion network; returns the best checkpoint by held-out loss.

    Emits a non-convergence warning (converged=False) when the held-out loss
    fails to drop by the configured factor within the epoch budget.
    """
    import warnings

    if not corpus:
        raise ValueError("empty corpus")
    cfg = config or PriorTrainConfig()
    torch.manual_seed(cfg.seed)
    ir = torch.stack([p.ir for p in corpus])
    vis = torch.stack([p.vis for p in corpus])
    z_ir = codec.encode(ir)
    z_vis = codec.encode(vis)
    z_c = concat_sources(z_ir, z_vis)

    n_hold = max(1, int(len(corpus) * cfg.holdout_fraction)) if len(corpus) > 1 else 0
    hold = slice(0, n_hold) if n_hold else slice(0, 0)
    train_idx = torch.arange(n_hold, len(corpus))
    if len(train_idx) == 0:
        train_idx = torch.arange(len(corpus))

    model = PriorFusionNet(z_ir.shape[1], width=cfg.width, blocks=cfg.blocks)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    def holdout_loss() -> float:
        idx = train_idx if n_hold == 0 else torch.arange(0, n_hold)
        with torch.no_grad():
            fused = codec.decode(model(z_c[idx]))
            return fusion_loss(ir[idx], vis[idx], fused, cfg.sigma1, cfg.sigma2).item()

    initial = holdout_loss()
    best = initial
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    history: list[float] = []
    gen = torch.Generator().manual_seed(cfg.seed)
    for _ in range(cfg.epochs):
        perm = train_idx[torch.randperm(len(train_idx), generator=gen)]
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            fused = codec.decode(model(z_c[idx]))
            loss = fusion_loss(ir[idx], vis[idx], fused, cfg.sigma1, cfg.sigma2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(loss.item())
        cur = holdout_loss()
        if cur < best:
            best = cur
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
    model.load_state_dict(best_state)
    model.eval()
    converged = best <= initial / cfg.target_improvement
    if not converged:
        warnings.warn(
            f"prior fusion training missed the {cfg.target_improvement}x target: "
            f"{initial:.4f} -> {best:.4f}; returning best checkpoint"
        )
    return PriorTrainResult(model, initial, best, converged, history)
