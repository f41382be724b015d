"""Self-describing checkpoint container.

Every checkpoint stores an architecture descriptor alongside the weights so
loading never guesses shapes. Coupled checkpoints additionally record the
reference checkpoint hash and the fine-tuning hyperparameters for
provenance.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import torch

from .pcldm import CoupledModel
from .prior import PriorFusionNet
from .unet import ConditionalDenoiser

__all__ = [
    "state_hash",
    "save_prior",
    "load_prior",
    "save_denoiser",
    "load_denoiser",
    "save_coupled",
    "load_coupled",
]


def state_hash(state_dict: dict) -> str:
    buf = io.BytesIO()
    torch.save({k: v.cpu() for k, v in sorted(state_dict.items())}, buf)
    return hashlib.sha256(buf.getvalue()).hexdigest()[:16]


def _save(path: str | Path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def _load(path: str | Path, kind: str) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != kind:
        raise ValueError(f"{path}: expected checkpoint kind {kind!r}, got {payload.get('kind')!r}")
    return payload


def save_prior(path: str | Path, model: PriorFusionNet) -> None:
    _save(path, {"kind": "prior", "arch": model.arch(), "state": model.state_dict()})


def load_prior(path: str | Path) -> PriorFusionNet:
    payload = _load(path, "prior")
    model = PriorFusionNet(**payload["arch"])
    model.load_state_dict(payload["state"])
    model.eval()
    return model


def save_denoiser(path: str | Path, model: ConditionalDenoiser) -> None:
    _save(path, {"kind": "denoiser", "arch": model.arch(), "state": model.state_dict()})


def load_denoiser(path: str | Path) -> ConditionalDenoiser:
    payload = _load(path, "denoiser")
    arch = dict(payload["arch"])
    arch["channel_mults"] = tuple(arch["channel_mults"])
    model = ConditionalDenoiser(**arch)
    model.load_state_dict(payload["state"])
    model.eval()
    return model


def save_coupled(
    path: str | Path,
    model: CoupledModel,
    loss_kind: str,
    beta: float,
    mu: float,
) -> None:
    _save(
        path,
        {
            "kind": "coupled",
            "arch": model.ref.arch(),
            "ref_hash": state_hash(model.ref.state_dict()),
            "ref_state": model.ref.state_dict(),
            "trainable_state": model.trainable.state_dict(),
            "zero_proj_state": model.zero_proj.state_dict(),
            "pref_emb": model.pref_emb.detach().clone(),
            "loss_kind": loss_kind,
            "beta": beta,
            "mu": mu,
        },
    )


def load_coupled(path: str | Path) -> tuple[CoupledModel, dict]:
    """Returns the model plus its provenance metadata."""
    payload = _load(path, "coupled")
    arch = dict(payload["arch"])
    arch["channel_mults"] = tuple(arch["channel_mults"])
    ref = ConditionalDenoiser(**arch)
    ref.load_state_dict(payload["ref_state"])
    model = CoupledModel(ref)
    model.trainable.load_state_dict(payload["trainable_state"])
    model.zero_proj.load_state_dict(payload["zero_proj_state"])
    with torch.no_grad():
        model.pref_emb.copy_(payload["pref_emb"])
    model.eval()
    meta = {k: payload[k] for k in ("ref_hash", "loss_kind", "beta", "mu")}
    return model, meta
