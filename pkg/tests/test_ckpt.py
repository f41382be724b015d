import pytest
import torch

from fusionpref.ckpt import (
    load_coupled,
    load_denoiser,
    load_prior,
    save_coupled,
    save_denoiser,
    save_prior,
    state_hash,
)
from fusionpref.pcldm import CoupledModel
from fusionpref.prior import PriorFusionNet
from fusionpref.unet import ConditionalDenoiser, Conditioning


def _denoiser(seed=0):
    torch.manual_seed(seed)
    m = ConditionalDenoiser(latent_channels=4, cond_channels=8, base_width=8, prompt_dim=8)
    with torch.no_grad():
        m.out_conv.weight.normal_(std=0.05)
    return m


def test_state_hash_stable_and_sensitive():
    m1 = _denoiser(0)
    m2 = _denoiser(0)
    m3 = _denoiser(1)
    assert state_hash(m1.state_dict()) == state_hash(m2.state_dict())
    assert state_hash(m1.state_dict()) != state_hash(m3.state_dict())


def test_prior_round_trip(tmp_path):
    torch.manual_seed(0)
    model = PriorFusionNet(4, width=8, blocks=2)
    with torch.no_grad():
        model.head.weight.normal_(std=0.1)
    save_prior(tmp_path / "p.pt", model)
    loaded = load_prior(tmp_path / "p.pt")
    assert loaded.arch() == model.arch()
    z = torch.randn(8, 8, 8)
    assert torch.equal(loaded(z), model(z))


def test_denoiser_round_trip(tmp_path):
    model = _denoiser()
    save_denoiser(tmp_path / "d.pt", model)
    loaded = load_denoiser(tmp_path / "d.pt")
    z = torch.randn(1, 4, 8, 8)
    cond = Conditioning(z_c=torch.randn(1, 8, 8, 8))
    assert torch.equal(loaded(z, cond, 3), model(z, cond, 3))


def test_coupled_round_trip(tmp_path):
    model = CoupledModel(_denoiser())
    with torch.no_grad():
        model.zero_proj.weight.normal_(std=0.1)
        model.pref_emb.normal_()
    save_coupled(tmp_path / "c.pt", model, "idpo", 10.0, 0.5)
    loaded, meta = load_coupled(tmp_path / "c.pt")
    assert meta["loss_kind"] == "idpo"
    assert meta["beta"] == 10.0 and meta["mu"] == 0.5
    assert meta["ref_hash"] == state_hash(model.ref.state_dict())
    z = torch.randn(2, 4, 8, 8)
    cond = Conditioning(z_c=torch.randn(2, 8, 8, 8))
    assert torch.equal(loaded(z, cond, 7), model(z, cond, 7))


def test_kind_mismatch(tmp_path):
    model = PriorFusionNet(4, width=8, blocks=1)
    save_prior(tmp_path / "p.pt", model)
    with pytest.raises(ValueError, match="kind"):
        load_denoiser(tmp_path / "p.pt")
