from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np
import torch


class ChromaQueryError(Exception):
    pass


class ShapeError(ChromaQueryError, ValueError):
    pass


class NonFiniteError(ChromaQueryError, FloatingPointError):
    pass


class ConfigError(ChromaQueryError, ValueError):
    pass


class EmptyDatasetError(ChromaQueryError, ValueError):
    pass


class ExitCode(Enum):
    SUCCESS = 0
    USAGE = 1
    PARTIAL = 2
    FATAL = 3


class AttentionKind(Enum):
    CROSS = 'cross'
    SELF = 'self'


class BlockOrder(Enum):
    """Sublayer order inside one color decoder block."""
    CROSS_SELF = 'cross_self'
    SELF_SELF = 'self_self'
    CROSS_CROSS = 'cross_cross'
    SELF_CROSS = 'self_cross'

    @property
    def kinds(self):
        first, second = self.value.split('_')
        return AttentionKind(first), AttentionKind(second)


class RgbImage:
    """H×W×3 float image, channel order R,G,B, values clamped into [0, 1]."""

    def __init__(self, pixels, **kwargs):
        clamp = kwargs.get('clamp', True)
        pixels = np.asarray(pixels, dtype=np.float32)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ShapeError('RgbImage expects an H×W×3 array, got shape {}'.format(pixels.shape))
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ShapeError('RgbImage needs at least one pixel, got shape {}'.format(pixels.shape))
        _check_finite(pixels, 'RgbImage')
        if clamp:
            pixels = np.clip(pixels, 0.0, 1.0)
        self.pixels = pixels

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def to_tensor(self):
        """3×H×W float tensor."""
        return torch.from_numpy(np.ascontiguousarray(self.pixels.transpose(2, 0, 1)))

    @classmethod
    def from_tensor(cls, tensor):
        array = tensor.detach().cpu().float().numpy()
        return cls(array.transpose(1, 2, 0))

    def to_uint8(self):
        return np.round(self.pixels * 255.0).astype(np.uint8)

    @classmethod
    def from_uint8(cls, array):
        return cls(np.asarray(array, dtype=np.float32) / 255.0)

    def to_lab(self):
        from chromaquery import cqcolorspace
        return LabImage.from_tensor(cqcolorspace.rgb_to_lab(self.to_tensor()))


class LabImage:
    """CIELAB image held as L (H×W×1, [0, 100]) and AB (H×W×2, [-128, 127])."""

    def __init__(self, L, AB, **kwargs):
        tolerance = kwargs.get('tolerance', 1e-3)
        L = np.asarray(L, dtype=np.float32)
        AB = np.asarray(AB, dtype=np.float32)
        if L.ndim != 3 or L.shape[2] != 1:
            raise ShapeError('L channel must be H×W×1, got {}'.format(L.shape))
        if AB.ndim != 3 or AB.shape[2] != 2:
            raise ShapeError('AB channels must be H×W×2, got {}'.format(AB.shape))
        if L.shape[:2] != AB.shape[:2]:
            raise ShapeError('L {} and AB {} differ spatially'.format(L.shape[:2], AB.shape[:2]))
        _check_finite(L, 'LabImage.L')
        _check_finite(AB, 'LabImage.AB')
        if L.min() < -tolerance or L.max() > 100.0 + tolerance:
            raise ValueError('L outside [0, 100]: [{:.3f}, {:.3f}]'.format(L.min(), L.max()))
        if AB.min() < -128.0 - tolerance or AB.max() > 127.0 + tolerance:
            raise ValueError('AB outside [-128, 127]: [{:.3f}, {:.3f}]'.format(AB.min(), AB.max()))
        self.L = L
        self.AB = AB

    @property
    def height(self):
        return self.L.shape[0]

    @property
    def width(self):
        return self.L.shape[1]

    def to_tensor(self):
        """3×H×W tensor with channels L, a, b."""
        stacked = np.concatenate([self.L, self.AB], axis=2)
        return torch.from_numpy(np.ascontiguousarray(stacked.transpose(2, 0, 1)))

    @classmethod
    def from_tensor(cls, tensor):
        array = tensor.detach().cpu().float().numpy().transpose(1, 2, 0)
        return cls(array[:, :, :1], array[:, :, 1:])

    def to_rgb(self):
        from chromaquery import cqcolorspace
        return RgbImage.from_tensor(cqcolorspace.lab_to_rgb(self.to_tensor()))


class Batch:
    """Training pair batch in Lab units: x_L B×1×H×W, y_AB B×2×H×W."""

    def __init__(self, x_L, y_AB, ids=None):
        if x_L.dim() != 4 or x_L.shape[1] != 1:
            raise ShapeError('x_L must be B×1×H×W, got {}'.format(tuple(x_L.shape)))
        if y_AB.dim() != 4 or y_AB.shape[1] != 2:
            raise ShapeError('y_AB must be B×2×H×W, got {}'.format(tuple(y_AB.shape)))
        if x_L.shape[0] < 1 or x_L.shape[0] != y_AB.shape[0] or x_L.shape[2:] != y_AB.shape[2:]:
            raise ShapeError('x_L {} and y_AB {} do not pair up'.format(tuple(x_L.shape), tuple(y_AB.shape)))
        self.x_L = x_L
        self.y_AB = y_AB
        self.ids = list(ids) if ids is not None else []

    def __len__(self):
        return self.x_L.shape[0]

    def to(self, device):
        return Batch(self.x_L.to(device), self.y_AB.to(device), self.ids)


class FeaturePyramid(NamedTuple):
    f4: torch.Tensor
    f8: torch.Tensor
    f16: torch.Tensor
    f32: torch.Tensor


class PixelDecoderOutput(NamedTuple):
    embedding: torch.Tensor
    # F_1 at 1/16, F_2 at 1/8, F_3 at 1/4
    features: Sequence[torch.Tensor]

    def by_scale(self):
        return {16: self.features[0], 8: self.features[1], 4: self.features[2]}


class AbPrediction:
    """Network-space AB prediction plus what it takes to get back to Lab units."""

    def __init__(self, ab, scale=128.0):
        if ab.dim() != 4 or ab.shape[1] != 2:
            raise ShapeError('AB prediction must be B×2×H×W, got {}'.format(tuple(ab.shape)))
        self.ab = ab
        self.scale = scale

    def denormalized(self, clamp=True):
        ab = self.ab * self.scale
        if clamp:
            ab = ab.clamp(-128.0, 127.0)
        return ab


class ColorStats(NamedTuple):
    sigma_rgyb: torch.Tensor
    mu_rgyb: torch.Tensor


class EmbeddingStats:
    def __init__(self, mu, sigma, n, **kwargs):
        symmetry_tol = kwargs.get('symmetry_tol', 1e-8)
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
        if sigma.shape != (mu.shape[0], mu.shape[0]):
            raise ShapeError('covariance {} does not match mean {}'.format(sigma.shape, mu.shape))
        if n < 2:
            raise EmptyDatasetError('embedding statistics need n >= 2, got {}'.format(n))
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=symmetry_tol):
            raise ValueError('covariance is not symmetric')
        self.mu = mu
        self.sigma = sigma
        self.n = int(n)

    @property
    def dim(self):
        return self.mu.shape[0]


def _check_finite(array, what):
    if not np.all(np.isfinite(array)):
        raise NonFiniteError('{} contains non-finite values'.format(what))


def check_finite_tensor(tensor, what, **kwargs):
    hint = kwargs.get('hint', None)
    if not torch.isfinite(tensor).all():
        message = '{} contains non-finite values'.format(what)
        if hint is not None:
            message += ' ({})'.format(hint)
        raise NonFiniteError(message)
    return tensor
