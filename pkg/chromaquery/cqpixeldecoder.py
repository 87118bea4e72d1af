"""Pixel decoder: four pixel-shuffle upsampling stages with encoder shortcuts."""
import logging

import torch
from torch import nn
import torch.nn.functional as F

from chromaquery.cqdata import ConfigError, FeaturePyramid, PixelDecoderOutput, ShapeError
from chromaquery.cqencoder import LayerNorm2d

log = logging.getLogger(__name__)


class PixelDecoderConfig:
    def __init__(self, **kwargs):
        self.widths = tuple(int(w) for w in kwargs.get('widths', (512, 512, 256, 256)))
        self.shortcut_norm = kwargs.get('shortcut_norm', True)
        self.last_scale = kwargs.get('last_scale', 4)
        if len(self.widths) != 4 or any(w <= 0 for w in self.widths):
            raise ConfigError('pixel decoder needs 4 positive widths, got {}'.format(self.widths))
        if 8 * self.last_scale != 32:
            raise ConfigError('stages must restore ×32, last scale {} does not'.format(self.last_scale))


def pixel_shuffle(x, upscale_factor):
    channels = x.shape[-3]
    if upscale_factor < 1 or channels % (upscale_factor ** 2):
        raise ShapeError('{} channels cannot shuffle by {}'.format(channels, upscale_factor))
    return F.pixel_shuffle(x, upscale_factor)


def pixel_unshuffle(x, downscale_factor):
    h, w = x.shape[-2:]
    if h % downscale_factor or w % downscale_factor:
        raise ShapeError('{}×{} cannot unshuffle by {}'.format(h, w, downscale_factor))
    return F.pixel_unshuffle(x, downscale_factor)


class UpStage(nn.Module):
    """PixelShuffle ×2, concat the encoder shortcut, 3×3 conv."""

    def __init__(self, in_channels, skip_channels, out_channels, shortcut_norm=True):
        super().__init__()
        if in_channels % 4:
            raise ConfigError('{} channels cannot pixel-shuffle by 2'.format(in_channels))
        merged = in_channels // 4 + skip_channels
        self.norm = LayerNorm2d(merged) if shortcut_norm else nn.Identity()
        self.conv = nn.Conv2d(merged, out_channels, kernel_size=3, padding=1)

    def forward(self, x, skip):
        x = pixel_shuffle(x, 2)
        return self.conv(self.norm(torch.cat([x, skip], dim=1)))


class PixelDecoder(nn.Module):
    def __init__(self, encoder_widths, cfg: PixelDecoderConfig):
        super().__init__()
        if len(encoder_widths) != 4:
            raise ConfigError('pixel decoder needs 4 encoder widths, got {}'.format(encoder_widths))
        self.cfg = cfg
        self.encoder_widths = tuple(encoder_widths)
        w = cfg.widths
        c4, c8, c16, c32 = self.encoder_widths
        self.up1 = UpStage(c32, c16, w[0], cfg.shortcut_norm)
        self.up2 = UpStage(w[0], c8, w[1], cfg.shortcut_norm)
        self.up3 = UpStage(w[1], c4, w[2], cfg.shortcut_norm)
        # expand before the ×4 shuffle so the embedding keeps w[3] channels
        self.expand = nn.Conv2d(w[2], w[3] * cfg.last_scale ** 2, kernel_size=1)

    @property
    def embed_dim(self):
        return self.cfg.widths[3]

    def forward(self, pyr: FeaturePyramid) -> PixelDecoderOutput:
        got = tuple(f.shape[1] for f in pyr)
        if got != self.encoder_widths:
            raise ShapeError('pyramid widths {} do not match encoder widths {}'.format(got, self.encoder_widths))
        f1 = self.up1(pyr.f32, pyr.f16)
        f2 = self.up2(f1, pyr.f8)
        f3 = self.up3(f2, pyr.f4)
        embedding = pixel_shuffle(self.expand(f3), self.cfg.last_scale)
        return PixelDecoderOutput(embedding, (f1, f2, f3))


def decode_pixels(pyr, decoder: PixelDecoder) -> PixelDecoderOutput:
    return decoder(pyr)
