"""Preference dataset: record schema, JSONL manifest, collection pipelines,
and the programmatic scorers used for automatic preference labeling.

All file references inside a record are relative to the manifest's
directory. Masks are single-channel {0, 255} PNGs thresholded on load.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import torch

from .images import load_image, save_mask
from .metrics import average_gradient_ag, entropy_en, masked_stats, standard_deviation_sd

__all__ = [
    "ManifestError",
    "PreferenceRecord",
    "Scorer",
    "builtin_scorers",
    "composite_scorer",
    "get_scorer",
    "collect_region_specific",
    "collect_global",
    "append_manifest",
    "load_manifest",
]

_SOURCE_RE = re.compile(r"^(human|auto:[A-Za-z0-9_\-]+)$")


class ManifestError(ValueError):
    """Malformed manifest content."""


@dataclass(frozen=True)
class PreferenceRecord:
    pair_id: str
    ir_path: str
    vis_path: str
    winner_path: str
    loser_path: str
    mask_path: str
    source: str
    created_at: str
    annotator: str | None = None

    def __post_init__(self):
        if self.winner_path == self.loser_path:
            raise ManifestError("winner and loser must be distinct candidate files")
        if not _SOURCE_RE.match(self.source):
            raise ManifestError(f"invalid source {self.source!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "PreferenceRecord":
        data = json.loads(line)
        known = {f for f in PreferenceRecord.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ManifestError(f"unknown fields {sorted(extra)}")
        return PreferenceRecord(**data)


@dataclass(frozen=True)
class Scorer:
    """Deterministic candidate ranking function; higher scores are better."""

    name: str
    fn: Callable[[torch.Tensor, torch.Tensor | None], float]

    def __call__(self, image: torch.Tensor, mask: torch.Tensor | None = None) -> float:
        return self.fn(image, mask)


def _maybe_masked(metric: Callable[[torch.Tensor], float], key: str):
    def score(image: torch.Tensor, mask: torch.Tensor | None = None) -> float:
        if mask is None:
            return metric(image)
        in_mask, _ = masked_stats(image, mask)
        value = in_mask[key]
        return float(value) if value is not None else 0.0

    return score


def builtin_scorers() -> list[Scorer]:
    return [
        Scorer("en", _maybe_masked(entropy_en, "EN")),
        Scorer("sd", _maybe_masked(standard_deviation_sd, "SD")),
        Scorer("ag", _maybe_masked(average_gradient_ag, "AG")),
    ]


def composite_scorer(w_en: float, w_sd: float, w_ag: float) -> Scorer:
    """Weighted sum of the entropy, contrast, and gradient-energy scorers."""
    parts = list(zip((w_en, w_sd, w_ag), builtin_scorers()))

    def score(image: torch.Tensor, mask: torch.Tensor | None = None) -> float:
        return sum(w * s(image, mask) for w, s in parts if w != 0.0)

    return Scorer("composite", score)


def get_scorer(name: str) -> Scorer:
    for s in builtin_scorers():
        if s.name == name:
            return s
    raise KeyError(f"unknown scorer {name!r}; available: en, sd, ag")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _next_mask_path(root: Path, pair_id: str) -> str:
    n = len(list((root / "masks").glob(f"{pair_id}_*.png")))
    return f"masks/{pair_id}_{n}.png"


def _validate_mask(mask: torch.Tensor) -> None:
    if mask.dim() != 2:
        raise ValueError(f"mask must be 2-D, got shape {tuple(mask.shape)}")
    if not torch.isin(mask, torch.tensor([0.0, 1.0], dtype=mask.dtype)).all():
        raise ValueError("mask must be binary")


def collect_region_specific(
    root: str | Path,
    pair_id: str,
    ir_path: str,
    vis_path: str,
    candidate_paths: list[str],
    mask: torch.Tensor,
    winner_idx: int,
    loser_idx: int,
    source: str = "human",
    annotator: str | None = None,
    manifest: str = "manifest.jsonl",
) -> PreferenceRecord:
    """Persist a region-specific preference: mask stored verbatim, record appended."""
    root = Path(root)
    if winner_idx == loser_idx:
        raise ValueError(f"winner and loser indices collide: {winner_idx}")
    _validate_mask(mask)
    if mask.sum() == 0:
        warnings.warn(
            f"pair {pair_id}: all-zero mask; record will exert consistency pressure only"
        )
    mask_rel = _next_mask_path(root, pair_id)
    save_mask(mask, root / mask_rel)
    record = PreferenceRecord(
        pair_id=pair_id,
        ir_path=ir_path,
        vis_path=vis_path,
        winner_path=candidate_paths[winner_idx],
        loser_path=candidate_paths[loser_idx],
        mask_path=mask_rel,
        source=source,
        created_at=_now(),
        annotator=annotator,
    )
    append_manifest(root / manifest, record)
    return record


def collect_global(
    root: str | Path,
    pair_id: str,
    ir_path: str,
    vis_path: str,
    candidate_paths: list[str],
    scorer: Scorer,
    patch: tuple[int, int, int, int] | None = None,
    region_mask: torch.Tensor | None = None,
    manifest: str = "manifest.jsonl",
) -> PreferenceRecord:
    """Score candidates and persist an automatic preference record.

    Winner is the argmax score, loser the argmin; ties break toward the
    lower candidate index. The stored mask is all-ones over the patch (or
    the supplied region mask), zeros elsewhere; with neither, whole-image.
    """
    root = Path(root)
    if len(candidate_paths) < 2:
        raise ValueError(f"need at least 2 candidates, got {len(candidate_paths)}")
    images = [load_image(root / p) for p in candidate_paths]
    h, w = images[0].shape[-2:]
    if region_mask is not None:
        _validate_mask(region_mask)
        mask = region_mask.clone()
    elif patch is not None:
        x0, y0, pw, ph = patch
        mask = torch.zeros(h, w)
        mask[y0 : y0 + ph, x0 : x0 + pw] = 1.0
    else:
        mask = torch.ones(h, w)
    scores = [scorer(im, mask) for im in images]
    winner_idx = max(range(len(scores)), key=lambda i: (scores[i], -i))
    loser_idx = min(range(len(scores)), key=lambda i: (scores[i], -i))
    mask_rel = _next_mask_path(root, pair_id)
    save_mask(mask, root / mask_rel)
    record = PreferenceRecord(
        pair_id=pair_id,
        ir_path=ir_path,
        vis_path=vis_path,
        winner_path=candidate_paths[winner_idx],
        loser_path=candidate_paths[loser_idx],
        mask_path=mask_rel,
        source=f"auto:{scorer.name}",
        created_at=_now(),
    )
    append_manifest(root / manifest, record)
    return record


def append_manifest(path: str | Path, record: PreferenceRecord) -> None:
    """Append one record as a single line; the write is flushed before returning."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = record.to_json() + "\n"
    with open(path, "a", encoding="utf-8") as f:
        f.write(line)
        f.flush()


def load_manifest(path: str | Path, check_files: bool = True) -> list[PreferenceRecord]:
    """Read all records; malformed lines raise with their line number."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(PreferenceRecord.from_json(line))
            except (json.JSONDecodeError, ManifestError, TypeError) as e:
                raise ManifestError(f"{path}:{lineno}: {e}") from e
    if check_files:
        missing = []
        for r in records:
            for p in (r.ir_path, r.vis_path, r.winner_path, r.loser_path, r.mask_path):
                if not (path.parent / p).exists():
                    missing.append(str(path.parent / p))
        if missing:
            raise FileNotFoundError(
                "manifest references missing files:\n" + "\n".join(sorted(set(missing)))
            )
    return records
