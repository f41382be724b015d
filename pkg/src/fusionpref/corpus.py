"""Paired IR/VIS corpus handling and the synthetic desk-scale corpus generator.

Synthetic pairs mimic night surveillance scenes: the infrared image carries
bright thermal targets on a dark background, the visible image carries a
bright texture in which the same targets appear as dark silhouettes. Each
pair ships with a binary target mask used by the toy preference scorers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .images import load_image, load_mask, save_image, save_mask

__all__ = ["ImagePair", "load_corpus", "load_target_mask", "make_synthetic_corpus"]


@dataclass(frozen=True)
class ImagePair:
    pair_id: str
    ir: torch.Tensor
    vis: torch.Tensor


def load_corpus(root: str | Path) -> list[ImagePair]:
    """Load all `<id>_ir.png` / `<id>_vis.png` pairs under `root`, sorted by id."""
    root = Path(root)
    pairs = []
    for ir_path in sorted(root.glob("*_ir.png")):
        pair_id = ir_path.name[: -len("_ir.png")]
        vis_path = root / f"{pair_id}_vis.png"
        if not vis_path.exists():
            raise FileNotFoundError(f"missing visible image for pair {pair_id}: {vis_path}")
        pairs.append(ImagePair(pair_id, load_image(ir_path), load_image(vis_path)))
    if not pairs:
        raise FileNotFoundError(f"no *_ir.png files under {root}")
    return pairs


def load_target_mask(root: str | Path, pair_id: str) -> torch.Tensor:
    return load_mask(Path(root) / "targets" / f"{pair_id}.png")


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Low-frequency noise in [0, 1] from bilinear upsampling of a coarse grid."""
    coarse = rng.random((cells, cells))
    ys = np.linspace(0, cells - 1, size)
    xs = np.linspace(0, cells - 1, size)
    y0 = np.clip(ys.astype(int), 0, cells - 2)
    x0 = np.clip(xs.astype(int), 0, cells - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = coarse[np.ix_(y0, x0)]
    b = coarse[np.ix_(y0, x0 + 1)]
    c = coarse[np.ix_(y0 + 1, x0)]
    d = coarse[np.ix_(y0 + 1, x0 + 1)]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def make_synthetic_corpus(
    n: int, size: int, seed: int, out_dir: str | Path, mask_scale: float = 1.2
) -> Path:
    """Generate `n` IR/VIS pairs plus `targets/<id>.png` blob masks.

    Deterministic: the same (n, size, seed) yields byte-identical files.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out = Path(out_dir)
    (out / "targets").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    for i in range(n):
        pair_id = f"{i:04d}"
        ir = 0.08 + 0.06 * _smooth_noise(rng, size, 5)
        # bright, fairly flat visible texture: the thermal targets then carry
        # most of the contrast, so fusion results that weight the infrared
        # source differently are clearly separable in the target region
        vis = 0.72 + 0.10 * _smooth_noise(rng, size, 7)
        # a few faint geometric shapes in the visible texture
        for _ in range(rng.integers(1, 4)):
            x0, y0 = rng.integers(0, size - 8, 2)
            w, h = rng.integers(4, max(5, size // 4), 2)
            vis[y0 : y0 + h, x0 : x0 + w] += rng.uniform(-0.08, 0.08)
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(1, 3)):
            r = rng.uniform(size * 0.08, size * 0.14)
            cx = rng.uniform(1.5 * r, size - 1.5 * r)
            cy = rng.uniform(1.5 * r, size - 1.5 * r)
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            # soft-edged disk: flat core, ~2 px falloff at the rim
            profile = np.clip((r - np.sqrt(d2)) / 2.0 + 0.5, 0.0, 1.0)
            ir = ir + (0.88 - ir) * profile
            vis = vis + (0.10 - vis) * profile
            mask |= d2 <= (mask_scale * r) ** 2
        save_image(torch.from_numpy(np.clip(ir, 0, 1).astype(np.float32))[None], out / f"{pair_id}_ir.png")
        save_image(torch.from_numpy(np.clip(vis, 0, 1).astype(np.float32))[None], out / f"{pair_id}_vis.png")
        save_mask(torch.from_numpy(mask.astype(np.float32)), out / "targets" / f"{pair_id}.png")
    return out
