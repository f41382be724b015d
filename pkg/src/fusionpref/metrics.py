"""Classical fusion-quality metrics and masked-region statistics.

All metrics operate on the 0-255 grayscale scale. RGB input is converted
with ITU-R BT.601 luma weights. Forward differences are used for the
gradient-based metrics, with boundary pixels excluded.
"""

from __future__ import annotations

import numpy as np
import torch

__all__ = [
    "to_gray",
    "entropy_en",
    "standard_deviation_sd",
    "average_gradient_ag",
    "spatial_frequency_sf",
    "scd",
    "masked_stats",
    "all_metrics",
]

_LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(image) -> np.ndarray:
    """(C, H, W) or (H, W) tensor/array in [0, 1] -> float grayscale in [0, 255]."""
    arr = image.detach().cpu().numpy() if torch.is_tensor(image) else np.asarray(image)
    arr = arr.astype(np.float64)
    if arr.ndim == 3:
        if arr.shape[0] == 1:
            arr = arr[0]
        elif arr.shape[0] == 3:
            arr = np.tensordot(_LUMA, arr, axes=1)
        else:
            raise ValueError(f"expected 1 or 3 channels, got {arr.shape[0]}")
    elif arr.ndim != 2:
        raise ValueError(f"expected 2-D or 3-D input, got shape {arr.shape}")
    return arr * 255.0


def _hist_entropy(values: np.ndarray) -> float:
    codes = np.clip(np.round(values), 0, 255).astype(np.uint8)
    counts = np.bincount(codes.ravel(), minlength=256)
    p = counts[counts > 0] / codes.size
    return float(-(p * np.log2(p)).sum())


def entropy_en(image) -> float:
    """Shannon entropy (bits) of the 8-bit grayscale histogram."""
    return _hist_entropy(to_gray(image))


def standard_deviation_sd(image) -> float:
    """Population standard deviation of grayscale intensities."""
    return float(to_gray(image).std())


def average_gradient_ag(image) -> float:
    """Mean over interior pixels of sqrt((dx^2 + dy^2) / 2), forward differences."""
    g = to_gray(image)
    dx = g[:-1, 1:] - g[:-1, :-1]
    dy = g[1:, :-1] - g[:-1, :-1]
    return float(np.sqrt((dx * dx + dy * dy) / 2.0).mean())


def spatial_frequency_sf(image) -> float:
    """sqrt(RF^2 + CF^2): RMS of row- and column-direction forward differences."""
    g = to_gray(image)
    rf2 = ((g[:, 1:] - g[:, :-1]) ** 2).mean()
    cf2 = ((g[1:, :] - g[:-1, :]) ** 2).mean()
    return float(np.sqrt(rf2 + cf2))


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        return 0.0  # zero-variance convention
    return float((a * b).sum() / denom)


def scd(fused, ir, vis) -> float:
    """Sum of difference correlations: corr(F-A, B) + corr(F-B, A)."""
    f, a, b = to_gray(fused), to_gray(ir), to_gray(vis)
    if not (f.shape == a.shape == b.shape):
        raise ValueError("shape mismatch in scd")
    return _corr(f - a, b) + _corr(f - b, a)


def all_metrics(image) -> dict[str, float]:
    return {
        "EN": entropy_en(image),
        "SD": standard_deviation_sd(image),
        "AG": average_gradient_ag(image),
        "SF": spatial_frequency_sf(image),
    }


def _region_report(g: np.ndarray, region: np.ndarray, ref: np.ndarray | None) -> dict:
    """EN/SD/AG over a boolean region; empty region reports absent metrics."""
    n = int(region.sum())
    report: dict[str, float | int | None] = {"pixels": n}
    if n == 0:
        report.update({"EN": None, "SD": None, "AG": None, "MAD": None})
        return report
    vals = g[region]
    report["EN"] = _hist_entropy(vals)
    report["SD"] = float(vals.std())
    dx = g[:-1, 1:] - g[:-1, :-1]
    dy = g[1:, :-1] - g[:-1, :-1]
    interior = region[:-1, :-1]
    if interior.any():
        report["AG"] = float(np.sqrt((dx * dx + dy * dy)[interior] / 2.0).mean())
    else:
        report["AG"] = None
    if ref is not None:
        report["MAD"] = float(np.abs(g - ref)[region].mean() / 255.0)
    else:
        report["MAD"] = None
    return report


def masked_stats(image, mask, reference=None) -> tuple[dict, dict]:
    """Metrics over the mask support and its complement.

    `reference`, when given, adds the mean absolute difference (on the [0,1]
    scale) against a same-shape reference image.
    """
    g = to_gray(image)
    m = mask.detach().cpu().numpy() if torch.is_tensor(mask) else np.asarray(mask)
    if not np.isin(m, (0.0, 1.0)).all():
        raise ValueError("mask must be binary")
    if m.shape != g.shape:
        raise ValueError(f"mask shape {m.shape} != image shape {g.shape}")
    ref = to_gray(reference) if reference is not None else None
    region = m.astype(bool)
    return _region_report(g, region, ref), _region_report(g, ~region, ref)
