"""Training objectives: pixel, perceptual, adversarial and colorfulness terms."""
import logging
from collections import namedtuple

import torch
from torch import nn
import torch.nn.functional as F

from chromaquery.cqdata import ColorStats, ConfigError, ShapeError, check_finite_tensor

log = logging.getLogger(__name__)

# keeps sqrt differentiable at zero spread; value shift stays below 1e-4
ROOT_EPS = 1e-8

LossTerms = namedtuple('LossTerms', ['pix', 'per', 'adv', 'col'])


class LossWeights:
    def __init__(self, **kwargs):
        self.pix = float(kwargs.get('pix', 0.1))
        self.per = float(kwargs.get('per', 5.0))
        self.adv = float(kwargs.get('adv', 1.0))
        self.col = float(kwargs.get('col', 0.5))
        for name in LossTerms._fields:
            if getattr(self, name) < 0:
                raise ConfigError('loss weight {} must be non-negative, got {}'.format(name, getattr(self, name)))

    def as_terms(self):
        return LossTerms(self.pix, self.per, self.adv, self.col)


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError('{}: shapes {} and {} differ'.format(what, tuple(a.shape), tuple(b.shape)))


def pixel_loss(pred, target):
    _same_shape(pred, target, 'pixel_loss')
    return F.l1_loss(pred, target)


def perceptual_loss(pred_rgb, target_rgb, extractor):
    """Sum over the extractor's layers of the mean L1 feature distance."""
    _same_shape(pred_rgb, target_rgb, 'perceptual_loss')
    pred_feats = extractor(pred_rgb)
    target_feats = extractor(target_rgb)
    return sum(F.l1_loss(p, t) for p, t in zip(pred_feats, target_feats))


class RandomConvExtractor(nn.Module):
    """Frozen four-stage conv net with pinned random weights.

    Stands in for a pretrained VGG16 where no download is wanted; layer outputs
    are taken after each stage's activation.
    """

    def __init__(self, **kwargs):
        super().__init__()
        seed = kwargs.get('seed', 0)
        widths = kwargs.get('widths', (16, 32, 64, 64))
        generator = torch.Generator().manual_seed(seed)
        stages = []
        in_ch = 3
        for i, w in enumerate(widths):
            conv = nn.Conv2d(in_ch, w, kernel_size=3, stride=1 if i == 0 else 2, padding=1)
            with torch.no_grad():
                bound = 1.0 / (in_ch * 9) ** 0.5
                conv.weight.copy_(torch.empty_like(conv.weight).uniform_(-bound, bound, generator=generator))
                conv.bias.zero_()
            stages.append(nn.Sequential(conv, nn.ReLU()))
            in_ch = w
        self.stages = nn.ModuleList(stages)
        self.requires_grad_(False)

    def forward(self, rgb):
        feats = []
        x = rgb
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class VGGExtractor(nn.Module):
    """relu1_2 / relu2_2 / relu3_3 / relu4_3 of torchvision's VGG16."""

    _SLICES = ((0, 4), (4, 9), (9, 16), (16, 23))

    def __init__(self, **kwargs):
        super().__init__()
        from torchvision import models
        pretrained = kwargs.get('pretrained', True)
        weights = models.VGG16_Weights.IMAGENET1K_V1 if pretrained else None
        features = models.vgg16(weights=weights).features
        self.slices = nn.ModuleList(nn.Sequential(*[features[i] for i in range(a, b)]) for a, b in self._SLICES)
        self.register_buffer('mean', torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer('std', torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.requires_grad_(False)

    def forward(self, rgb):
        x = (rgb - self.mean) / self.std
        feats = []
        for s in self.slices:
            x = s(x)
            feats.append(x)
        return feats


def _root(x):
    # exact zero at x == 0, finite gradient there
    return torch.sqrt(x + ROOT_EPS) - ROOT_EPS ** 0.5


def colorfulness_stats(rgb255) -> ColorStats:
    """Opponent-plane spread and mean per image for B×3×H×W (or 3×H×W) RGB on 0-255."""
    if rgb255.dim() == 3:
        rgb255 = rgb255.unsqueeze(0)
    if rgb255.dim() != 4 or rgb255.shape[1] != 3:
        raise ShapeError('colorfulness expects B×3×H×W RGB, got {}'.format(tuple(rgb255.shape)))
    r, g, b = rgb255.flatten(2).unbind(dim=1)
    rg = r - g
    yb = 0.5 * (r + g) - b
    sigma = _root(rg.var(dim=-1, unbiased=False) + yb.var(dim=-1, unbiased=False))
    mu = _root(rg.mean(dim=-1) ** 2 + yb.mean(dim=-1) ** 2)
    return ColorStats(sigma, mu)


def colorfulness_score_tensor(rgb255):
    stats = colorfulness_stats(rgb255)
    return stats.sigma_rgyb + 0.3 * stats.mu_rgyb


def colorfulness_loss(rgb255):
    """1 - [σ_rgyb + 0.3·μ_rgyb] / 100, per image, averaged over the batch. Unclamped."""
    return (1.0 - colorfulness_score_tensor(rgb255) / 100.0).mean()


class PatchDiscriminator(nn.Module):
    """Conv-Norm-LeakyReLU patch critic emitting a grid of logits."""

    def __init__(self, input_c=3, num_filters=64, n_down=3):
        super().__init__()
        model = [self.get_layers(input_c, num_filters, norm=False)]
        model += [self.get_layers(num_filters * 2 ** i, num_filters * 2 ** (i + 1), s=1 if i == (n_down - 1) else 2)
                  for i in range(n_down)]
        model += [self.get_layers(num_filters * 2 ** n_down, 1, s=1, norm=False, act=False)]
        self.model = nn.Sequential(*model)
        self.apply(self._init_weights)

    def get_layers(self, ni, nf, k=4, s=2, p=1, norm=True, act=True):
        layers = [nn.Conv2d(ni, nf, k, s, p, bias=not norm)]
        if norm:
            layers += [nn.BatchNorm2d(nf)]
        if act:
            layers += [nn.LeakyReLU(0.2, True)]
        return nn.Sequential(*layers)

    @staticmethod
    def _init_weights(m):
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)

    def forward(self, x):
        return self.model(x)


class GANLoss(nn.Module):
    def __init__(self, gan_mode='lsgan', real_label=1.0, fake_label=0.0):
        super().__init__()
        self.register_buffer('real_label', torch.tensor(real_label))
        self.register_buffer('fake_label', torch.tensor(fake_label))
        self.gan_mode = gan_mode
        if gan_mode == 'lsgan':
            self.loss = nn.MSELoss()
        elif gan_mode == 'vanilla':
            self.loss = nn.BCEWithLogitsLoss()
        elif gan_mode == 'hinge':
            self.loss = None
        else:
            raise ConfigError('gan mode {!r} not implemented'.format(gan_mode))

    def get_labels(self, preds, target_is_real):
        labels = self.real_label if target_is_real else self.fake_label
        return labels.to(preds.dtype).expand_as(preds)

    def __call__(self, preds, target_is_real, for_discriminator=True):
        check_finite_tensor(preds, 'discriminator logits')
        if self.gan_mode == 'hinge':
            if not for_discriminator:
                return -preds.mean()
            if target_is_real:
                return F.relu(1.0 - preds).mean()
            return F.relu(1.0 + preds).mean()
        return self.loss(preds, self.get_labels(preds, target_is_real))

    def generator_term(self, disc, fake):
        return self(disc(fake), True, for_discriminator=False)

    def discriminator_term(self, disc, fake, real):
        loss_fake = self(disc(fake.detach()), False)
        loss_real = self(disc(real), True)
        return (loss_fake + loss_real) * 0.5


def adversarial_losses(disc, fake, real, gan_loss=None):
    """(generator term, discriminator term) for one fake/real pair."""
    gan_loss = gan_loss if gan_loss is not None else GANLoss('lsgan')
    return gan_loss.generator_term(disc, fake), gan_loss.discriminator_term(disc, fake, real)


def total_loss(terms: LossTerms, weights: LossWeights):
    w = weights.as_terms()
    return sum(weight * term for weight, term in zip(w, terms))
