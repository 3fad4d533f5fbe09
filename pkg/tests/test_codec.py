import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck_util import finite_difference_rel_error
from vstgnn.codec import CodecConfig, VisualCodec, count_parameters
from vstgnn.errors import ShapeError, ValidationError
from vstgnn.trainer import fit_autoencoder

SMALL = CodecConfig(depth=2, base_channels=4, embedding_size=8, input_resolution=(16, 16))


def make(cfg=SMALL, seed=0):
    torch.manual_seed(seed)
    return VisualCodec(cfg).eval()


def test_encode_decode_shapes():
    codec = make()
    x = torch.rand(5, 1, 16, 16)
    v = codec.encode(x)
    assert v.shape == (5, 8)
    y = codec.decode(v)
    assert y.shape == x.shape
    assert torch.all((y >= 0) & (y <= 1))


def test_empty_batch():
    codec = make()
    assert codec.encode(torch.zeros(0, 1, 16, 16)).shape == (0, 8)
    assert codec.decode(torch.zeros(0, 8)).shape == (0, 1, 16, 16)


def test_identical_inputs_identical_rows():
    codec = make()
    img = torch.rand(1, 1, 16, 16)
    with torch.no_grad():
        v = codec.encode(torch.cat([img, img]))
    assert torch.equal(v[0], v[1])


def test_zero_embedding_decodes_to_bias_image():
    codec = make()
    with torch.no_grad():
        out = codec.decode(torch.zeros(3, 8))
        single = codec.decode(torch.zeros(1, 8))
    assert torch.equal(out[0], out[1]) and torch.equal(out[1], out[2])
    assert torch.allclose(out[0], single[0])


def test_resolution_mismatch():
    with pytest.raises(ShapeError, match="expects"):
        make().encode(torch.rand(2, 1, 32, 32))
    with pytest.raises(ShapeError):
        make().decode(torch.rand(2, 9))


def test_config_divisibility():
    with pytest.raises(ValidationError):
        CodecConfig(depth=3, input_resolution=(20, 20))


def test_default_is_full_scale():
    cfg = CodecConfig()
    assert cfg.embedding_size == 256 and cfg.input_resolution == (128, 128)
    assert cfg.bottleneck_shape == (512, 8, 8)


# --------------------------------------------------------------------------- parameter counts

def test_count_depth_zero_linear():
    cfg = CodecConfig(depth=0, embedding_size=256, input_resolution=(128, 128))
    assert count_parameters(cfg) == 128 * 128 * 256 + 256 == 4_194_560


def test_count_matches_instantiated_modules():
    codec = make()
    assert count_parameters(SMALL, "encoder") == sum(p.numel() for p in codec.encoder.parameters())
    assert count_parameters(SMALL, "codec") == sum(p.numel() for p in codec.parameters())


def test_count_monotone_in_channels():
    wider = CodecConfig(depth=2, base_channels=8, embedding_size=8, input_resolution=(16, 16))
    for part in ("encoder", "decoder", "codec"):
        assert count_parameters(wider, part) > count_parameters(SMALL, part)
    assert count_parameters(SMALL) == count_parameters(SMALL)


# --------------------------------------------------------------------------- numerics

@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(seed):
    codec = make(seed=seed).double()
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(2, 1, 16, 16, generator=gen, dtype=torch.float64)

    def loss():
        return torch.mean((codec(x) - x) ** 2)

    assert finite_difference_rel_error(loss, codec, seed=seed) < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([0.0, 1.0, 1e-12, 1 - 1e-12]), st.integers(0, 2 ** 31 - 1))
def test_extreme_inputs_stay_finite(fill, seed):
    codec = make()
    x = torch.full((2, 1, 16, 16), fill)
    x[1] = torch.rand(1, 16, 16, generator=torch.Generator().manual_seed(seed)).round()
    with torch.no_grad():
        v = codec.encode(x)
        assert torch.isfinite(v).all()
        assert torch.isfinite(codec.decode(v)).all()


def test_skip_mode_round_trip_shape():
    cfg = CodecConfig(depth=2, base_channels=4, embedding_size=8, input_resolution=(16, 16),
                      skip_connections=True)
    codec = make(cfg)
    x = torch.rand(3, 1, 16, 16)
    assert codec(x).shape == x.shape
    with pytest.raises(ShapeError):
        codec.decode(codec.encode(x))


def test_overfit_single_image_autoencoder():
    # Oracle is the training loss itself: a correct differentiable codec can memorize one image.
    torch.manual_seed(0)
    yy, xx = torch.meshgrid(torch.linspace(0, 1, 32), torch.linspace(0, 1, 32), indexing="ij")
    img = (0.2 + 0.6 * torch.exp(-((yy - 0.4) ** 2 + (xx - 0.6) ** 2) / 0.02))[None, None]
    cfg = CodecConfig(depth=2, base_channels=8, embedding_size=32, input_resolution=(32, 32))
    codec = VisualCodec(cfg)
    losses = fit_autoencoder(codec, img, epochs=400, lr=1e-3)
    assert losses[-1] < 1e-3
