"""Query-based color decoder.

K zero-initialized color queries are refined by stacked color decoder blocks
(CDBs). Each block cross-attends to one scale of the pixel decoder features,
then self-attends, then runs an MLP; the scales are consumed group by group in
a round-robin schedule. No positional encodings are used anywhere, so every
attention here is a set operation over feature positions.
"""
import logging
import math

import torch
from torch import nn

from chromaquery.cqdata import AttentionKind, BlockOrder, ConfigError, ShapeError, check_finite_tensor

log = logging.getLogger(__name__)

KNOWN_SCALES = (16, 8, 4)


class ColorDecoderConfig:
    def __init__(self, **kwargs):
        self.num_queries = int(kwargs.get('num_queries', 100))
        self.dim = int(kwargs.get('dim', 256))
        self.repeats = int(kwargs.get('repeats', 3))
        self.heads = int(kwargs.get('heads', 8))
        # 0 means "same as heads"; 1 gives the single-head reading of the cross-attention
        cross_heads = int(kwargs.get('cross_heads', 0))
        self.cross_heads = cross_heads or self.heads
        self.ffn_dim = int(kwargs.get('ffn_dim', 2048))
        self.scales = tuple(int(s) for s in kwargs.get('scales', KNOWN_SCALES))
        self.scaled = bool(kwargs.get('scaled', True))
        try:
            self.block_order = BlockOrder(kwargs.get('block_order', BlockOrder.CROSS_SELF))
        except ValueError:
            raise ConfigError('unknown block order {!r}'.format(kwargs.get('block_order')))
        if self.num_queries < 1 or self.dim < 1 or self.repeats < 1 or self.ffn_dim < 1:
            raise ConfigError('queries, dim, repeats and ffn_dim must be positive')
        if not self.scales or any(s not in KNOWN_SCALES for s in self.scales):
            raise ConfigError('scale schedule {} must use only {}'.format(self.scales, KNOWN_SCALES))
        for h in (self.heads, self.cross_heads):
            if h < 1 or self.dim % h:
                raise ConfigError('dim {} is not divisible by {} heads'.format(self.dim, h))

    @property
    def schedule(self):
        """Scale consumed by each block, in execution order."""
        return list(self.scales) * self.repeats

    @property
    def num_blocks(self):
        return len(self.scales) * self.repeats


def attention(q, k, v, scale=1.0):
    """softmax(q k^T · scale) v over the last two axes; returns (out, weights)."""
    logits = torch.matmul(q, k.transpose(-2, -1)) * scale
    check_finite_tensor(logits, 'attention logits', hint='check feature magnitudes or enable scaling')
    weights = logits.softmax(dim=-1)
    return torch.matmul(weights, v), weights


class CrossAttention(nn.Module):
    """Z' = softmax(f_Q(Z) f_K(F)^T) f_V(F) + Z, split over heads, no output projection."""

    def __init__(self, dim, heads=8, scaled=True):
        super().__init__()
        if dim % heads:
            raise ConfigError('dim {} is not divisible by {} heads'.format(dim, heads))
        self.dim = dim
        self.heads = heads
        self.scaled = scaled
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        for proj in (self.q_proj, self.k_proj, self.v_proj):
            nn.init.xavier_uniform_(proj.weight)
            nn.init.zeros_(proj.bias)
        self.last_weights = None

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.dim // self.heads).transpose(1, 2)

    def forward(self, z, feats):
        if feats.dim() != 4 or feats.shape[1] != self.dim:
            raise ShapeError('cross-attention expects B×{}×H×W features, got {}'.format(self.dim, tuple(feats.shape)))
        if z.shape[0] != feats.shape[0] or z.shape[-1] != self.dim:
            raise ShapeError('queries {} do not match features {}'.format(tuple(z.shape), tuple(feats.shape)))
        # row-major flattening of positions
        tokens = feats.flatten(2).transpose(1, 2)
        q = self._split(self.q_proj(z))
        k = self._split(self.k_proj(tokens))
        v = self._split(self.v_proj(tokens))
        scale = 1.0 / math.sqrt(self.dim // self.heads) if self.scaled else 1.0
        out, weights = attention(q, k, v, scale)
        self.last_weights = weights.detach()
        b, _, n, _ = out.shape
        return out.transpose(1, 2).reshape(b, n, self.dim) + z


class SelfAttention(nn.Module):
    """Z + MSA(LN(Z))."""

    def __init__(self, dim, heads=8):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=0.0, batch_first=True)

    def forward(self, z, feats=None):
        x = self.norm(z)
        out, _ = self.attn(x, x, x, need_weights=False)
        return z + out


class FeedForward(nn.Module):
    """Z + MLP(LN(Z))."""

    def __init__(self, dim, hidden):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.ReLU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, z):
        return z + self.fc2(self.act(self.fc1(self.norm(z))))


class ColorDecoderBlock(nn.Module):
    def __init__(self, dim, heads=8, cross_heads=8, ffn_dim=2048,
                 order=BlockOrder.CROSS_SELF, scaled=True):
        super().__init__()
        self.order = BlockOrder(order)
        layers = []
        for kind in self.order.kinds:
            if kind is AttentionKind.CROSS:
                layers.append(CrossAttention(dim, cross_heads, scaled))
            else:
                layers.append(SelfAttention(dim, heads))
        self.attn_layers = nn.ModuleList(layers)
        self.ffn = FeedForward(dim, ffn_dim)
        self.norm = nn.LayerNorm(dim)

    def forward(self, z, feats):
        for layer in self.attn_layers:
            z = layer(z, feats)
        return self.norm(self.ffn(z))


def cross_attend(attn: CrossAttention, z_prev, feats):
    return attn(z_prev, feats)


def cdb_forward(block: ColorDecoderBlock, z_prev, feats):
    return block(z_prev, feats)


class ColorDecoder(nn.Module):
    def __init__(self, cfg: ColorDecoderConfig, feature_widths):
        """feature_widths maps a scale (16, 8, 4) to the channel count of that
        pixel decoder feature."""
        super().__init__()
        self.cfg = cfg
        missing = [s for s in set(cfg.scales) if s not in feature_widths]
        if missing:
            raise ConfigError('schedule needs features at 1/{} that the pixel decoder does not export'.format(missing))
        self.query_feat = nn.Parameter(torch.zeros(cfg.num_queries, cfg.dim))
        self.input_proj = nn.ModuleDict({
            str(s): nn.Conv2d(feature_widths[s], cfg.dim, kernel_size=1) for s in sorted(set(cfg.scales))
        })
        self.blocks = nn.ModuleList(
            ColorDecoderBlock(cfg.dim, cfg.heads, cfg.cross_heads, cfg.ffn_dim, cfg.block_order, cfg.scaled)
            for _ in range(cfg.num_blocks)
        )

    def initial_queries(self, batch_size):
        return self.query_feat.unsqueeze(0).expand(batch_size, -1, -1)

    def forward(self, features_by_scale, z0=None):
        first = next(iter(features_by_scale.values()))
        batch_size = first.shape[0]
        z = self.initial_queries(batch_size) if z0 is None else z0
        projected = {s: self.input_proj[str(s)](features_by_scale[s]) for s in set(self.cfg.scales)}
        for block, scale in zip(self.blocks, self.cfg.schedule):
            z = block(z, projected[scale])
        return z


def decode_colors(decoder: ColorDecoder, f1, f2, f3, z0=None):
    return decoder({16: f1, 8: f2, 4: f3}, z0=z0)


def query_attention_maps(queries, embedding):
    """sigmoid(<query_k, E_i[:, h, w]>) for every query: B×K×H×W in (0, 1)."""
    if queries.shape[-1] != embedding.shape[1]:
        raise ShapeError('queries have C={} but the embedding has C={}'.format(queries.shape[-1], embedding.shape[1]))
    return torch.sigmoid(torch.einsum('bkc,bchw->bkhw', queries, embedding))
