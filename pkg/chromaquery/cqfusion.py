"""Fusion of color and image embeddings, and the full generator."""
import logging

import torch
from torch import nn

from chromaquery import cqcolorspace
from chromaquery.cqcolordecoder import ColorDecoder, ColorDecoderConfig, query_attention_maps
from chromaquery.cqdata import AbPrediction, ConfigError, ShapeError
from chromaquery.cqencoder import Encoder, EncoderConfig
from chromaquery.cqpixeldecoder import PixelDecoder, PixelDecoderConfig

log = logging.getLogger(__name__)


def fuse(color_embedding, image_embedding):
    """F̂[b,k,h,w] = Σ_c E_c[b,k,c] · E_i[b,c,h,w]."""
    if color_embedding.shape[-1] != image_embedding.shape[1]:
        raise ShapeError('color embedding C={} does not match image embedding C={}'.format(
            color_embedding.shape[-1], image_embedding.shape[1]))
    return torch.einsum('bkc,bchw->bkhw', color_embedding, image_embedding)


class PredictionHead(nn.Module):
    """1×1 conv to two AB channels, optionally over [F̂, x_L]."""

    def __init__(self, in_channels, concat_input=True):
        super().__init__()
        self.concat_input = concat_input
        self.conv = nn.Conv2d(in_channels + (1 if concat_input else 0), 2, kernel_size=1)

    def forward(self, fused, x_L):
        if fused.shape[-2:] != x_L.shape[-2:]:
            raise ShapeError('fused map {} and input {} differ spatially'.format(
                tuple(fused.shape[-2:]), tuple(x_L.shape[-2:])))
        if self.concat_input:
            fused = torch.cat([fused, x_L], dim=1)
        return self.conv(fused)


def predict_ab(head: PredictionHead, fused, x_L) -> AbPrediction:
    return AbPrediction(head(fused, x_L), scale=cqcolorspace.AB_SCALE)


class Colorizer(nn.Module):
    """encode -> decode_pixels -> decode_colors -> fuse -> predict_ab.

    Takes the luminance channel in Lab units (B×1×H×W, [0, 100]) and returns
    AB in network units (Lab AB / 128).
    """

    def __init__(self, encoder_cfg: EncoderConfig, pixel_cfg: PixelDecoderConfig,
                 color_cfg: ColorDecoderConfig, **kwargs):
        super().__init__()
        self.use_color_decoder = kwargs.get('use_color_decoder', True)
        concat_input = kwargs.get('concat_input', True)
        self.encoder = Encoder(encoder_cfg)
        self.pixel_decoder = PixelDecoder(encoder_cfg.widths, pixel_cfg)
        if self.use_color_decoder:
            if color_cfg.dim != self.pixel_decoder.embed_dim:
                raise ConfigError('color decoder dim {} must equal the last pixel decoder width {}'.format(
                    color_cfg.dim, self.pixel_decoder.embed_dim))
            widths = pixel_cfg.widths
            self.color_decoder = ColorDecoder(color_cfg, {16: widths[0], 8: widths[1], 4: widths[2]})
            head_in = color_cfg.num_queries
        else:
            self.color_decoder = None
            head_in = self.pixel_decoder.embed_dim
        self.head = PredictionHead(head_in, concat_input)

    def embeddings(self, x_L):
        """(E_c or None, E_i) for a luminance batch in Lab units."""
        x = cqcolorspace.normalize_luminance(x_L)
        pixels = self.pixel_decoder(self.encoder(x))
        if self.color_decoder is None:
            return None, pixels.embedding
        return self.color_decoder(pixels.by_scale()), pixels.embedding

    def forward(self, x_L):
        return self.predict(x_L).ab

    def predict(self, x_L) -> AbPrediction:
        color_embedding, image_embedding = self.embeddings(x_L)
        fused = image_embedding if color_embedding is None else fuse(color_embedding, image_embedding)
        return predict_ab(self.head, fused, cqcolorspace.normalize_luminance(x_L))

    @torch.no_grad()
    def colorize(self, x_L):
        """Full Lab result ŷ: the input L untouched, AB denormalized and clamped."""
        ab = self.predict(x_L).denormalized(clamp=True)
        return cqcolorspace.merge_channels(x_L, ab)

    @torch.no_grad()
    def query_maps(self, x_L):
        color_embedding, image_embedding = self.embeddings(x_L)
        if color_embedding is None:
            raise ConfigError('query maps need a model with a color decoder')
        return query_attention_maps(color_embedding, image_embedding)


def colorize(x_L, model: Colorizer):
    was_training = model.training
    model.eval()
    try:
        return model.colorize(x_L)
    finally:
        model.train(was_training)
