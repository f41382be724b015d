"""PNG image and mask I/O. All pixel data moves as float tensors in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

__all__ = ["load_image", "save_image", "load_mask", "save_mask"]

MASK_THRESHOLD = 128  # 8-bit masks are binarized at this value on load


def load_image(path: str | Path) -> torch.Tensor:
    """Read a PNG as a (C, H, W) float tensor in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB" if im.mode not in ("L", "I;16") else "L"))
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(arr.astype(np.float32) / 255.0)


def save_image(image: torch.Tensor, path: str | Path) -> None:
    """Write a (C, H, W) or (H, W) tensor in [0, 1] as an 8-bit PNG."""
    arr = image.detach().cpu().numpy()
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    elif arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def load_mask(path: str | Path) -> torch.Tensor:
    """Read a mask PNG as an (H, W) float tensor with values exactly 0 or 1."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return torch.from_numpy((arr >= MASK_THRESHOLD).astype(np.float32))


def save_mask(mask: torch.Tensor, path: str | Path) -> None:
    """Write a binary (H, W) mask as a {0, 255} single-channel PNG."""
    arr = mask.detach().cpu().numpy()
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ValueError("mask values must be exactly 0 or 1")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((arr * 255).astype(np.uint8)).save(path)
