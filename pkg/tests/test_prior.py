import pytest
import torch
import torch.nn.functional as F

from fusionpref.codec import PatchifyCodec, concat_sources
from fusionpref.corpus import ImagePair
from fusionpref.prior import (
    PriorFusionNet,
    PriorTrainConfig,
    fuse_prior,
    fusion_loss,
    sobel_gradient,
    train_prior,
)


def naive_sobel(img: torch.Tensor) -> torch.Tensor:
    """Direct 3x3 convolution with replicate padding, explicit loops."""
    kx = torch.tensor([[-1.0, 0, 1], [-2, 0, 2], [-1, 0, 1]]) / 8.0
    ky = kx.T
    h, w = img.shape
    pad = F.pad(img[None, None], (1, 1, 1, 1), mode="replicate")[0, 0]
    out = torch.zeros(h, w, dtype=torch.float64)
    for y in range(h):
        for x in range(w):
            win = pad[y : y + 3, x : x + 3].double()
            gx = (win * kx.double()).sum()
            gy = (win * ky.double()).sum()
            out[y, x] = torch.sqrt(gx * gx + gy * gy + 1e-12)
    return out


class TestSobel:
    def test_constant_zero(self):
        g = sobel_gradient(torch.full((8, 8), 0.4))
        assert g.abs().max() < 1e-5

    def test_unit_ramp(self):
        # slope 1/pixel horizontally; 1/8-normalized kernel gives response 1
        ramp = torch.arange(16, dtype=torch.float32).repeat(16, 1)
        g = sobel_gradient(ramp)
        assert torch.allclose(g[1:-1, 1:-1], torch.ones(14, 14), atol=1e-4)

    def test_vertical_step_edge(self):
        # step of height 1: rows of the kernel sum to (1+2+1)/8 = 0.5 on each
        # side of the edge
        img = torch.zeros(8, 8)
        img[:, 4:] = 1.0
        g = sobel_gradient(img)
        assert g[4, 3].item() == pytest.approx(0.5, abs=1e-5)
        assert g[4, 4].item() == pytest.approx(0.5, abs=1e-5)
        assert g[4, 1].item() < 1e-5

    def test_matches_direct_convolution(self):
        torch.manual_seed(0)
        img = torch.rand(10, 10)
        assert torch.allclose(sobel_gradient(img).double(), naive_sobel(img), atol=1e-5)

    def test_rotation_symmetry(self):
        torch.manual_seed(1)
        img = torch.rand(12, 12)
        g_rot = sobel_gradient(torch.rot90(img))
        assert torch.allclose(torch.rot90(sobel_gradient(img)), g_rot, atol=1e-5)

    def test_shapes(self):
        assert sobel_gradient(torch.rand(8, 8)).shape == (8, 8)
        assert sobel_gradient(torch.rand(3, 8, 8)).shape == (3, 8, 8)
        assert sobel_gradient(torch.rand(2, 3, 8, 8)).shape == (2, 3, 8, 8)


class TestFusionLoss:
    def test_perfect_fusion_intensity(self):
        # fused == max(ir, vis) and flat images: both terms vanish
        ir = torch.full((1, 8, 8), 0.2)
        vis = torch.full((1, 8, 8), 0.7)
        assert fusion_loss(ir, vis, torch.maximum(ir, vis)).item() < 1e-5

    def test_constant_offset_intensity_term(self):
        ir = torch.full((1, 8, 8), 0.2)
        vis = torch.full((1, 8, 8), 0.7)
        fused = torch.full((1, 8, 8), 0.6)  # 0.1 below max, still flat
        loss = fusion_loss(ir, vis, fused, sigma1=4.0, sigma2=10.0)
        assert loss.item() == pytest.approx(0.4, abs=1e-5)

    def test_sigma_weights_scale_terms(self):
        torch.manual_seed(2)
        ir, vis, fused = torch.rand(3, 1, 8, 8)
        l_i = fusion_loss(ir, vis, fused, sigma1=1.0, sigma2=0.0)
        l_g = fusion_loss(ir, vis, fused, sigma1=0.0, sigma2=1.0)
        combined = fusion_loss(ir, vis, fused, sigma1=4.0, sigma2=10.0)
        assert combined.item() == pytest.approx(4 * l_i.item() + 10 * l_g.item(), rel=1e-5)

    def test_symmetric_in_sources(self):
        torch.manual_seed(3)
        ir, vis, fused = torch.rand(3, 1, 8, 8)
        a = fusion_loss(ir, vis, fused)
        b = fusion_loss(vis, ir, fused)
        assert a.item() == pytest.approx(b.item(), rel=1e-6)

    def test_gradient_flows(self):
        torch.manual_seed(4)
        ir, vis = torch.rand(2, 1, 8, 8)
        fused = torch.rand(1, 8, 8, requires_grad=True)
        fusion_loss(ir, vis, fused).backward()
        assert fused.grad is not None and fused.grad.abs().sum() > 0

    def test_finite_difference_gradient(self):
        torch.manual_seed(5)
        ir = torch.rand(1, 6, 6, dtype=torch.float64)
        vis = torch.rand(1, 6, 6, dtype=torch.float64)
        fused = torch.rand(1, 6, 6, dtype=torch.float64, requires_grad=True)
        loss = fusion_loss(ir, vis, fused)
        loss.backward()
        eps = 1e-6
        ok = 0
        coords = [(0, 2, 3), (0, 0, 0), (0, 5, 5), (0, 3, 1), (0, 1, 4)]
        for c in coords:
            plus = fused.detach().clone()
            plus[c] += eps
            minus = fused.detach().clone()
            minus[c] -= eps
            fd = (fusion_loss(ir, vis, plus) - fusion_loss(ir, vis, minus)).item() / (2 * eps)
            an = fused.grad[c].item()
            if abs(fd - an) <= 1e-3 * max(1.0, abs(fd)):
                ok += 1
        assert ok == len(coords)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fusion_loss(torch.rand(1, 8, 8), torch.rand(1, 8, 8), torch.rand(1, 8, 9))

    def test_negative_sigma(self):
        x = torch.rand(1, 4, 4)
        with pytest.raises(ValueError):
            fusion_loss(x, x, x, sigma1=-1.0)


class TestPriorFusionNet:
    def test_identity_at_init(self):
        torch.manual_seed(6)
        net = PriorFusionNet(4)
        z_ir, z_vis = torch.randn(2, 4, 8, 8)
        z_c = concat_sources(z_ir, z_vis)
        out = net(z_c)
        assert torch.allclose(out, 0.5 * (z_ir + z_vis), atol=1e-6)

    def test_batched_matches_unbatched(self):
        torch.manual_seed(7)
        net = PriorFusionNet(2, width=8, blocks=1)
        for p in net.parameters():
            p.data.normal_(std=0.1)
        net.eval()
        z = torch.randn(3, 4, 8, 8)
        batched = net(z)
        single = torch.stack([net(z[i]) for i in range(3)])
        assert torch.allclose(batched, single, atol=1e-5)

    def test_wrong_channels(self):
        with pytest.raises(ValueError):
            PriorFusionNet(4)(torch.randn(6, 8, 8))

    def test_fuse_prior_no_grad(self):
        net = PriorFusionNet(2, width=8, blocks=1)
        out = fuse_prior(net, torch.randn(4, 8, 8))
        assert not out.requires_grad


def _toy_corpus(n=6, size=16, seed=0):
    torch.manual_seed(seed)
    pairs = []
    for i in range(n):
        ir = torch.zeros(1, size, size)
        ir[:, 4:12, 4:12] = 0.9
        ir += 0.05 * torch.rand_like(ir)
        vis = 0.5 + 0.2 * torch.rand(1, size, size)
        pairs.append(ImagePair(f"p{i:03d}", ir.clamp(0, 1), vis.clamp(0, 1)))
    return pairs


class TestTrainPrior:
    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train_prior([], PatchifyCodec(4))

    def test_loss_decreases_on_overfit(self):
        corpus = _toy_corpus(4)
        cfg = PriorTrainConfig(epochs=30, lr=2e-3, batch_size=4, seed=0, width=24, blocks=2)
        result = train_prior(corpus, PatchifyCodec(4), cfg)
        assert result.best_loss < 0.75 * result.initial_loss

    def test_seeded_determinism(self):
        corpus = _toy_corpus(3)
        cfg = PriorTrainConfig(epochs=2, batch_size=4, seed=11, width=16, blocks=1)
        r1 = train_prior(corpus, PatchifyCodec(4), cfg)
        r2 = train_prior(_toy_corpus(3), PatchifyCodec(4), cfg)
        for a, b in zip(r1.model.state_dict().values(), r2.model.state_dict().values()):
            assert torch.equal(a, b)
        assert r1.history == r2.history
