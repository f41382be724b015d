"""Preference-controllable infrared/visible image fusion with latent diffusion."""

__version__ = "0.1.0"

from .schedule import NoiseSchedule, build_linear_schedule, ddim_sample, ddpm_step, q_sample
from .codec import PatchifyCodec, TinyAutoencoder, concat_sources
from .prior import PriorFusionNet, fusion_loss, sobel_gradient, train_prior
from .unet import ConditionalDenoiser, Conditioning, PropertyPrompt
from .paldm import (
    denoise_loss,
    generate_candidates,
    interpolate_latent,
    joint_conditional_loss,
    train_paldm,
)
from .pcldm import (
    CoupledModel,
    PreferenceExample,
    contrastive_loss_baseline,
    downsample_mask,
    dpo_loss_baseline,
    finetune_idpo,
    fuse_with_preference,
    idpo_loss,
    o_terms,
    p_terms,
)
from .prefdata import PreferenceRecord, builtin_scorers, collect_global, collect_region_specific
from .metrics import average_gradient_ag, entropy_en, scd, spatial_frequency_sf, standard_deviation_sd
