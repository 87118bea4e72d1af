"""Hierarchical ConvNeXt-style backbone producing the 1/4 .. 1/32 feature pyramid."""
import logging

from torch import nn

from chromaquery.cqdata import ConfigError, FeaturePyramid, ShapeError

log = logging.getLogger(__name__)

STRIDES = (4, 8, 16, 32)


class EncoderConfig:
    def __init__(self, **kwargs):
        self.widths = tuple(int(w) for w in kwargs.get('widths', (96, 192, 384, 768)))
        self.depths = tuple(int(d) for d in kwargs.get('depths', (3, 3, 9, 3)))
        self.in_channels = kwargs.get('in_channels', 1)
        self.init_std = kwargs.get('init_std', 0.02)
        if len(self.widths) != 4 or len(self.depths) != 4:
            raise ConfigError('encoder needs 4 stage widths and 4 depths, got {} / {}'.format(self.widths, self.depths))
        if any(w <= 0 for w in self.widths):
            raise ConfigError('encoder widths must be positive: {}'.format(self.widths))
        if any(d < 0 for d in self.depths):
            raise ConfigError('encoder depths must be non-negative: {}'.format(self.depths))


class LayerNorm2d(nn.Module):
    """Per-position layer norm over the channel axis of a B×C×H×W map."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.norm = nn.LayerNorm(channels, eps=eps)

    def forward(self, x):
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class ConvNeXtBlock(nn.Module):
    def __init__(self, dim, expansion=4):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, kernel_size=7, padding=3, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pwconv1 = nn.Linear(dim, expansion * dim)
        self.act = nn.GELU()
        self.pwconv2 = nn.Linear(expansion * dim, dim)

    def forward(self, x):
        residual = x
        x = self.dwconv(x).permute(0, 2, 3, 1)
        x = self.pwconv2(self.act(self.pwconv1(self.norm(x))))
        return residual + x.permute(0, 3, 1, 2)


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths
        self.downsample = nn.ModuleList()
        # single-channel stem: L goes in as is
        self.downsample.append(nn.Sequential(
            nn.Conv2d(cfg.in_channels, widths[0], kernel_size=4, stride=4),
            LayerNorm2d(widths[0]),
        ))
        for i in range(3):
            self.downsample.append(nn.Sequential(
                LayerNorm2d(widths[i]),
                nn.Conv2d(widths[i], widths[i + 1], kernel_size=2, stride=2),
            ))
        self.stages = nn.ModuleList(
            nn.Sequential(*[ConvNeXtBlock(w) for _ in range(d)]) for w, d in zip(widths, cfg.depths)
        )
        self.apply(self._init_weights)

    def _init_weights(self, m):
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.trunc_normal_(m.weight, std=self.cfg.init_std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)

    @property
    def widths(self):
        return self.cfg.widths

    def forward(self, x_L) -> FeaturePyramid:
        if x_L.dim() != 4 or x_L.shape[1] != self.cfg.in_channels:
            raise ShapeError('encoder expects B×{}×H×W, got {}'.format(self.cfg.in_channels, tuple(x_L.shape)))
        h, w = x_L.shape[-2:]
        if h % 32 or w % 32:
            raise ShapeError('input {}×{} is not divisible by 32'.format(h, w))
        feats = []
        x = x_L
        for down, stage in zip(self.downsample, self.stages):
            x = stage(down(x))
            feats.append(x)
        return FeaturePyramid(*feats)


def encode(x_L, encoder: Encoder) -> FeaturePyramid:
    return encoder(x_L)
