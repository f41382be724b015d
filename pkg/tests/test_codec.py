import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionpref.codec import (
    CodecError,
    PatchifyCodec,
    TinyAutoencoder,
    concat_sources,
    train_autoencoder,
)


class TestPatchify:
    def test_shape(self):
        codec = PatchifyCodec(4)
        z = codec.encode(torch.rand(3, 64, 64))
        assert z.shape == (48, 16, 16)
        assert codec.latent_channels(3) == 48

    def test_constant_preserved(self):
        codec = PatchifyCodec(4)
        z = codec.encode(torch.full((1, 16, 16), 0.37))
        assert torch.allclose(z, torch.full_like(z, 0.37))

    def test_roundtrip_exact(self):
        codec = PatchifyCodec(4)
        x = torch.rand(3, 32, 32)
        assert torch.equal(codec.decode(codec.encode(x)), x)

    def test_inverse_roundtrip(self):
        codec = PatchifyCodec(2)
        z = torch.rand(4, 8, 8)  # in [0,1] so the decode clamp is inactive
        assert torch.equal(codec.encode(codec.decode(z)), z)

    def test_zero_latent_zero_image(self):
        codec = PatchifyCodec(4)
        assert torch.equal(codec.decode(torch.zeros(16, 4, 4)), torch.zeros(1, 16, 16))

    def test_not_divisible(self):
        with pytest.raises(CodecError):
            PatchifyCodec(4).encode(torch.rand(1, 30, 32))

    def test_bad_latent_channels(self):
        with pytest.raises(CodecError):
            PatchifyCodec(4).decode(torch.rand(7, 4, 4))

    def test_bad_factor(self):
        with pytest.raises(CodecError):
            PatchifyCodec(3)

    @given(
        f=st.sampled_from([1, 2, 4]),
        c=st.integers(1, 3),
        hw=st.integers(1, 4),
    )
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_property(self, f, c, hw):
        codec = PatchifyCodec(f)
        x = torch.rand(c, hw * f, hw * f)
        assert torch.equal(codec.decode(codec.encode(x)), x)

    def test_batched(self):
        codec = PatchifyCodec(2)
        x = torch.rand(5, 1, 8, 8)
        assert torch.equal(codec.decode(codec.encode(x)), x)


class TestConcatSources:
    def test_shape_and_order(self):
        a, b = torch.rand(4, 16, 16), torch.rand(4, 16, 16)
        z = concat_sources(a, b)
        assert z.shape == (8, 16, 16)
        assert torch.equal(z[:4], a) and torch.equal(z[4:], b)

    def test_identical_halves(self):
        a = torch.rand(4, 8, 8)
        z = concat_sources(a, a)
        assert torch.equal(z[:4], z[4:])

    def test_ordering_matters(self):
        a, b = torch.zeros(2, 4, 4), torch.ones(2, 4, 4)
        assert not torch.equal(concat_sources(a, b), concat_sources(b, a))

    def test_spatial_mismatch(self):
        with pytest.raises(CodecError):
            concat_sources(torch.rand(2, 4, 4), torch.rand(2, 8, 8))


@pytest.mark.slow
def test_tiny_autoencoder_reconstruction(tmp_path):
    # MAE threshold matches the pre-build calibration run recorded in the README
    from fusionpref.corpus import load_corpus, make_synthetic_corpus

    make_synthetic_corpus(100, 32, 0, tmp_path)
    corpus = load_corpus(tmp_path)
    images = [p.ir for p in corpus] + [p.vis for p in corpus]
    model = TinyAutoencoder(image_channels=1)
    mae = train_autoencoder(images, model, epochs=40, lr=2e-3, seed=0)
    assert mae <= 0.03
    z = model.encode(images[0])
    assert z.shape == (8, 8, 8)
    assert model.decode(z).shape == (1, 32, 32)
