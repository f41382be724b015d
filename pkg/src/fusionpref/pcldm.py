"""Preference-controlled model: a frozen reference denoiser coupled to a
trainable duplicate through a zero-initialized 1x1 projection, fine-tuned
with the masked preference objective.

At initialization the coupled output equals the reference output exactly,
so fine-tuning starts from the reference model's behaviour and the
preference term starts at ln 2.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .codec import Codec, concat_sources
from .corpus import ImagePair
from .schedule import NoiseSchedule, ddim_sample, q_sample
from .unet import ConditionalDenoiser, Conditioning, PropertyPrompt

__all__ = [
    "CoupledModel",
    "PreferenceExample",
    "downsample_mask",
    "p_terms",
    "o_terms",
    "IdpoTerms",
    "idpo_terms",
    "idpo_loss",
    "dpo_loss_baseline",
    "contrastive_loss_baseline",
    "FinetuneConfig",
    "FinetuneResult",
    "finetune_idpo",
    "fuse_with_preference",
]


class CoupledModel(nn.Module):
    """Frozen reference branch plus trainable duplicate behind a zero 1x1 conv.

    The reference branch always sees the general prompt; the trainable branch
    sees a dedicated preference token embedding allocated for this run. The
    ``prompt_emb`` field of incoming conditioning is ignored.
    """

    def __init__(self, ref: ConditionalDenoiser):
        super().__init__()
        self.ref = ref
        for p in self.ref.parameters():
            p.requires_grad_(False)
        self.ref.eval()
        self.trainable = copy.deepcopy(ref)
        for p in self.trainable.parameters():
            p.requires_grad_(True)
        k = ref.latent_channels
        self.zero_proj = nn.Conv2d(k, k, 1)
        nn.init.zeros_(self.zero_proj.weight)
        nn.init.zeros_(self.zero_proj.bias)
        general = PropertyPrompt.general(ref.n_levels)
        with torch.no_grad():
            base = ref.embed_prompt(general, 1)[0]
        # one distinct preference token per fine-tuning run, seeded from the
        # general token so the trainable branch starts on-manifold
        self.pref_emb = nn.Parameter(base.clone())
        self._general = general

    def train(self, mode: bool = True):
        super().train(mode)
        self.ref.eval()  # reference stays in eval regardless
        return self

    def finetuned_parameters(self):
        yield from self.trainable.parameters()
        yield from self.zero_proj.parameters()
        yield self.pref_emb

    def ref_forward(self, z_t: torch.Tensor, cond: Conditioning, t) -> torch.Tensor:
        b = z_t.shape[0]
        ref_cond = Conditioning(z_c=cond.z_c, prompt_emb=self.ref.embed_prompt(self._general, b))
        with torch.no_grad():
            return self.ref(z_t, ref_cond, t)

    def forward(self, z_t: torch.Tensor, cond: Conditioning, t) -> torch.Tensor:
        b = z_t.shape[0]
        theta_cond = Conditioning(z_c=cond.z_c, prompt_emb=self.pref_emb[None, :].expand(b, -1))
        update = self.zero_proj(self.trainable(z_t, theta_cond, t))
        return self.ref_forward(z_t, cond, t) + update


def downsample_mask(mask: torch.Tensor, factor: int) -> torch.Tensor:
    """Nearest-neighbor downsample: latent cell (i, j) takes pixel (i*f, j*f)."""
    if mask.dim() != 2:
        raise ValueError(f"mask must be 2-D, got shape {tuple(mask.shape)}")
    if not torch.isin(mask, torch.tensor([0.0, 1.0], dtype=mask.dtype)).all():
        raise ValueError("mask values must be exactly 0 or 1")
    h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask dims {h}x{w} not divisible by factor {factor}")
    return mask[::factor, ::factor].clone()


def _masked_sq(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Sum of squares of x restricted to the mask (broadcast over channels)."""
    return ((x * mask) ** 2).sum()


def p_terms(
    eps_gt: torch.Tensor, eps_theta: torch.Tensor, eps_ref: torch.Tensor, z_m: torch.Tensor
) -> torch.Tensor:
    """Masked squared-error gap between the trainable and reference predictions."""
    if not (eps_gt.shape == eps_theta.shape == eps_ref.shape):
        raise ValueError("shape mismatch in p_terms")
    return _masked_sq(eps_gt - eps_theta, z_m) - _masked_sq(eps_gt - eps_ref, z_m)


def o_terms(eps_theta: torch.Tensor, eps_ref: torch.Tensor, z_m_c: torch.Tensor) -> torch.Tensor:
    """Consistency penalty against the reference outside the preference region."""
    if eps_theta.shape != eps_ref.shape:
        raise ValueError("shape mismatch in o_terms")
    return _masked_sq(eps_theta - eps_ref, z_m_c)


@dataclass
class PreferenceExample:
    """Tensor-level preference sample: source latents, winner/loser latents, mask."""

    z_c: torch.Tensor
    z0_w: torch.Tensor
    z0_l: torch.Tensor
    z_m: torch.Tensor  # latent-resolution binary mask (h, w)


def example_from_record(record, root: str | Path, codec: Codec) -> PreferenceExample:
    """Load a manifest record's images and build the latent-level example."""
    from .images import load_image, load_mask

    from .paldm import scale_latent

    root = Path(root)
    z_ir = scale_latent(codec.encode(load_image(root / record.ir_path)))
    z_vis = scale_latent(codec.encode(load_image(root / record.vis_path)))
    mask = load_mask(root / record.mask_path)
    return PreferenceExample(
        z_c=concat_sources(z_ir, z_vis),
        z0_w=scale_latent(codec.encode(load_image(root / record.winner_path))),
        z0_l=scale_latent(codec.encode(load_image(root / record.loser_path))),
        z_m=downsample_mask(mask, codec.factor),
    )


@dataclass
class IdpoTerms:
    loss: torch.Tensor
    preference: torch.Tensor  # -log sigmoid(-beta * (P_w - P_l))
    p_w: torch.Tensor
    p_l: torch.Tensor
    o_w: torch.Tensor
    o_l: torch.Tensor


def _example_predictions(model: CoupledModel, ex: PreferenceExample, t: int, eps_w, eps_l, sched):
    z_tw = q_sample(ex.z0_w.unsqueeze(0), t, eps_w.unsqueeze(0), sched).z_t
    z_tl = q_sample(ex.z0_l.unsqueeze(0), t, eps_l.unsqueeze(0), sched).z_t
    cond = Conditioning(z_c=ex.z_c.unsqueeze(0))
    th_w = model(z_tw, cond, t)[0]
    th_l = model(z_tl, cond, t)[0]
    rf_w = model.ref_forward(z_tw, cond, t)[0]
    rf_l = model.ref_forward(z_tl, cond, t)[0]
    return th_w, th_l, rf_w, rf_l


def idpo_terms(
    model: CoupledModel,
    example: PreferenceExample,
    t: int,
    eps_w: torch.Tensor,
    eps_l: torch.Tensor,
    beta: float,
    mu: float,
    sched: NoiseSchedule,
) -> IdpoTerms:
    """Masked preference term plus off-mask consistency term for one example."""
    th_w, th_l, rf_w, rf_l = _example_predictions(model, example, t, eps_w, eps_l, sched)
    z_m = example.z_m
    z_m_c = 1.0 - z_m
    p_w = p_terms(eps_w, th_w, rf_w, z_m)
    p_l = p_terms(eps_l, th_l, rf_l, z_m)
    o_w = o_terms(th_w, rf_w, z_m_c)
    o_l = o_terms(th_l, rf_l, z_m_c)
    # -log sigmoid(-x) == softplus(x); stable for large beta
    pref = F.softplus(beta * (p_w - p_l))
    return IdpoTerms(pref + mu * (o_w + o_l), pref, p_w, p_l, o_w, o_l)


def idpo_loss(
    model: CoupledModel,
    example: PreferenceExample,
    t: int,
    eps_w: torch.Tensor,
    eps_l: torch.Tensor,
    beta: float,
    mu: float,
    sched: NoiseSchedule,
) -> torch.Tensor:
    return idpo_terms(model, example, t, eps_w, eps_l, beta, mu, sched).loss


def dpo_loss_baseline(
    model: CoupledModel,
    example: PreferenceExample,
    t: int,
    eps_w: torch.Tensor,
    eps_l: torch.Tensor,
    beta: float,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """Whole-image preference with no consistency term (all-ones mask, mu = 0)."""
    whole = PreferenceExample(
        z_c=example.z_c,
        z0_w=example.z0_w,
        z0_l=example.z0_l,
        z_m=torch.ones_like(example.z_m),
    )
    return idpo_loss(model, whole, t, eps_w, eps_l, beta, 0.0, sched)


def contrastive_loss_baseline(
    model: CoupledModel,
    example: PreferenceExample,
    t: int,
    eps_w: torch.Tensor,
    eps_l: torch.Tensor,
    margin: float,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """Masked hinge pushing the model to denoise the winner better than the loser."""
    th_w, th_l, _, _ = _example_predictions(model, example, t, eps_w, eps_l, sched)
    err_w = _masked_sq(eps_w - th_w, example.z_m)
    err_l = _masked_sq(eps_l - th_l, example.z_m)
    return torch.clamp(margin + err_w - err_l, min=0.0)


@dataclass
class FinetuneConfig:
    loss_kind: str = "idpo"  # idpo | dpo | contrast
    epochs: int = 20
    lr: float = 1e-5
    batch_size: int = 8
    beta: float = 10.0
    mu: float = 0.5
    margin: float = 1.0
    seed: int = 0
    divergence_factor: float = 10.0
    divergence_patience: int = 100


@dataclass
class FinetuneResult:
    model: CoupledModel
    loss_history: list[float] = field(default_factory=list)
    initial_preference: float = 0.0


def _batched_loss(
    model: CoupledModel,
    batch: list[PreferenceExample],
    t: int,
    eps_w: torch.Tensor,
    eps_l: torch.Tensor,
    cfg: FinetuneConfig,
    sched: NoiseSchedule,
) -> tuple[torch.Tensor, float]:
    """Mean loss over a batch, with one stacked forward pass per branch."""
    b = len(batch)
    z0_w = torch.stack([ex.z0_w for ex in batch])
    z0_l = torch.stack([ex.z0_l for ex in batch])
    z_c = torch.stack([ex.z_c for ex in batch])
    masks = torch.stack([ex.z_m for ex in batch])
    z_tw = q_sample(z0_w, t, eps_w, sched).z_t
    z_tl = q_sample(z0_l, t, eps_l, sched).z_t
    z_all = torch.cat([z_tw, z_tl])
    cond = Conditioning(z_c=torch.cat([z_c, z_c]))
    rf = model.ref_forward(z_all, cond, t)
    theta_cond = Conditioning(
        z_c=cond.z_c, prompt_emb=model.pref_emb[None, :].expand(2 * b, -1)
    )
    th = rf + model.zero_proj(model.trainable(z_all, theta_cond, t))
    th_w, th_l = th[:b], th[b:]
    rf_w, rf_l = rf[:b], rf[b:]

    def sq(x, m):
        return ((x * m[:, None, :, :]) ** 2).flatten(1).sum(dim=1)

    if cfg.loss_kind == "contrast":
        err_w = sq(eps_w - th_w, masks)
        err_l = sq(eps_l - th_l, masks)
        loss = torch.clamp(cfg.margin + err_w - err_l, min=0.0)
        return loss.mean(), 0.0

    if cfg.loss_kind == "dpo":
        masks = torch.ones_like(masks)
        mu = 0.0
    else:
        mu = cfg.mu
    comp = 1.0 - masks
    p_w = sq(eps_w - th_w, masks) - sq(eps_w - rf_w, masks)
    p_l = sq(eps_l - th_l, masks) - sq(eps_l - rf_l, masks)
    pref = F.softplus(cfg.beta * (p_w - p_l))
    o_w = sq(th_w - rf_w, comp)
    o_l = sq(th_l - rf_l, comp)
    loss = pref + mu * (o_w + o_l)
    return loss.mean(), pref.mean().item()


def finetune_idpo(
    ref_model: ConditionalDenoiser,
    examples: list[PreferenceExample],
    sched: NoiseSchedule,
    config: FinetuneConfig | None = None,
) -> FinetuneResult:
    """Fine-tune a coupled model on preference examples with the chosen loss."""
    cfg = config or FinetuneConfig()
    if not examples:
        raise ValueError("empty preference dataset")
    if cfg.loss_kind not in ("idpo", "dpo", "contrast"):
        raise ValueError(f"unknown loss kind {cfg.loss_kind!r}")
    torch.manual_seed(cfg.seed)
    model = CoupledModel(ref_model)
    opt = torch.optim.Adam(model.finetuned_parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    history: list[float] = []
    initial_pref = None
    initial_loss = None
    bad_streak = 0
    model.train()
    for _ in range(cfg.epochs):
        order = torch.randperm(len(examples), generator=gen).tolist()
        for i in range(0, len(order), cfg.batch_size):
            batch = [examples[j] for j in order[i : i + cfg.batch_size]]
            t = int(torch.randint(0, sched.T, (1,), generator=gen))
            shape = (len(batch),) + tuple(batch[0].z0_w.shape)
            eps_w = torch.randn(shape, generator=gen)
            eps_l = torch.randn(shape, generator=gen)
            loss, pref = _batched_loss(model, batch, t, eps_w, eps_l, cfg, sched)
            if initial_pref is None:
                initial_pref = pref
                initial_loss = loss.item()
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(loss.item())
            if initial_loss and loss.item() > cfg.divergence_factor * max(initial_loss, 1e-8):
                bad_streak += 1
                if bad_streak >= cfg.divergence_patience:
                    raise RuntimeError(
                        f"fine-tuning diverged: loss {loss.item():.4g} stayed above "
                        f"{cfg.divergence_factor}x the initial value for "
                        f"{cfg.divergence_patience} consecutive steps"
                    )
            else:
                bad_streak = 0
    model.eval()
    if not history:
        warnings.warn("no optimization steps ran")
    return FinetuneResult(model, history, initial_pref or 0.0)


def fuse_with_preference(
    model: CoupledModel,
    pair: ImagePair,
    codec: Codec,
    sched: NoiseSchedule,
    steps: int,
    seed: int = 0,
) -> torch.Tensor:
    """Run the sampler with the coupled model as denoiser and decode the result."""
    from .paldm import _pair_seed, scale_latent, unscale_latent

    model.eval()
    z_ir = scale_latent(codec.encode(pair.ir))
    z_vis = scale_latent(codec.encode(pair.vis))
    z_c = concat_sources(z_ir, z_vis)
    gen = torch.Generator().manual_seed(_pair_seed(seed, pair.pair_id))
    z_T = torch.randn(z_ir.shape, generator=gen)
    with torch.no_grad():
        z0 = ddim_sample(
            model, z_T.unsqueeze(0), Conditioning(z_c=z_c.unsqueeze(0)), sched, steps
        )
        return codec.decode(unscale_latent(z0))[0]
