import pytest
import torch

from chromaquery import cqencoder, cqmethods
from chromaquery.cqdata import ConfigError, ShapeError


@pytest.fixture
def encoder():
    return cqencoder.Encoder(cqmethods.encoder_config(cqmethods.get_cfg()))


def test_pyramid_strides(encoder):
    pyr = cqencoder.encode(torch.rand(2, 1, 64, 96) * 100, encoder)
    for f, stride, width in zip(pyr, cqencoder.STRIDES, encoder.widths):
        assert f.shape == (2, width, 64 // stride, 96 // stride)


def test_rejects_indivisible_input(encoder):
    with pytest.raises(ShapeError):
        encoder(torch.rand(1, 1, 50, 64))
    with pytest.raises(ShapeError):
        encoder(torch.rand(1, 3, 64, 64))


def test_config_validation():
    with pytest.raises(ConfigError):
        cqencoder.EncoderConfig(widths=(8, 16, 32))
    with pytest.raises(ConfigError):
        cqencoder.EncoderConfig(depths=(1, -1, 1, 1))


def test_reference_stage_plan():
    cfg = cqencoder.EncoderConfig()
    assert cfg.widths == (96, 192, 384, 768)
    assert cfg.depths == (3, 3, 9, 3)
