"""Config nodes, presets, ablation variants and the model/optimizer factories
built from them."""
import ast
import logging

import torch
from yacs.config import CfgNode as CN

from chromaquery.cqcolordecoder import ColorDecoderConfig, KNOWN_SCALES
from chromaquery.cqdata import BlockOrder, ConfigError
from chromaquery.cqencoder import EncoderConfig
from chromaquery.cqfusion import Colorizer
from chromaquery.cqlosses import GANLoss, LossWeights, PatchDiscriminator, RandomConvExtractor, VGGExtractor
from chromaquery.cqpixeldecoder import PixelDecoderConfig

log = logging.getLogger(__name__)

_C = CN()
_C.seed = 0

_C.data = CN()
_C.data.root = ''
_C.data.manifest = ''
_C.data.resolution = 64
_C.data.batch_size = 8
_C.data.augment = False
_C.data.hue_degrees = 18.0
_C.data.saturation_min = 0.7
_C.data.saturation_max = 1.3
# used when data.root is empty: procedurally generated shapes
_C.data.synthetic_size = 500
_C.data.num_workers = 0
_C.data.prefetch = 2

_C.model = CN()
_C.model.encoder = CN()
_C.model.encoder.widths = (8, 16, 32, 64)
_C.model.encoder.depths = (1, 1, 2, 1)
_C.model.decoder = CN()
_C.model.decoder.widths = (64, 64, 32, 32)
_C.model.decoder.shortcut_norm = True
_C.model.color = CN()
_C.model.color.enabled = True
_C.model.color.num_queries = 16
_C.model.color.dim = 32
_C.model.color.repeats = 1
_C.model.color.heads = 4
_C.model.color.cross_heads = 0
_C.model.color.ffn_dim = 128
_C.model.color.scales = (16, 8, 4)
_C.model.color.block_order = 'cross_self'
_C.model.color.scaled = True
_C.model.head = CN()
_C.model.head.concat_input = True

_C.loss = CN()
_C.loss.pix = 0.1
_C.loss.per = 5.0
_C.loss.adv = 1.0
_C.loss.col = 0.5
_C.loss.gan_mode = 'lsgan'
_C.loss.extractor = 'random'
_C.loss.disc_width = 32
_C.loss.disc_layers = 3

_C.train = CN()
_C.train.lr = 1e-4
_C.train.beta1 = 0.9
_C.train.beta2 = 0.99
_C.train.weight_decay = 0.01
_C.train.first_milestone = 80000
_C.train.milestone_interval = 40000
_C.train.gamma = 0.5
_C.train.total_iters = 2000
_C.train.d_steps = 1
_C.train.grad_clip = 0.0
_C.train.log_every = 10
_C.train.checkpoint_every = 500
_C.train.output_dir = 'runs/default'
_C.train.eval_batches = 4

BACKBONE_PRESETS = {
    'tiny': ((96, 192, 384, 768), (3, 3, 9, 3)),
    'small': ((96, 192, 384, 768), (3, 3, 27, 3)),
    'base': ((128, 256, 512, 1024), (3, 3, 27, 3)),
    'large': ((192, 384, 768, 1536), (3, 3, 27, 3)),
}

ABLATIONS = ('color_decoder_on_off', 'colorfulness_on_off', 'scales', 'decoder_order', 'query_count')
QUERY_COUNTS = (20, 50, 100, 200, 500)


def get_cfg():
    """Desk-scale defaults."""
    return _C.clone()


def reference_cfg():
    """The full layer plan at 256²: tiny backbone stage plan, K=100, C=256, M=3."""
    cfg = get_cfg()
    cfg.merge_from_list([
        'data.resolution', 256,
        'data.batch_size', 16,
        'model.encoder.widths', BACKBONE_PRESETS['tiny'][0],
        'model.encoder.depths', BACKBONE_PRESETS['tiny'][1],
        'model.decoder.widths', (512, 512, 256, 256),
        'model.color.num_queries', 100,
        'model.color.dim', 256,
        'model.color.repeats', 3,
        'model.color.heads', 8,
        'model.color.ffn_dim', 2048,
        'loss.disc_width', 64,
        'loss.extractor', 'vgg16',
        'train.total_iters', 400000,
    ])
    return cfg


def backbone_preset(cfg, name):
    if name not in BACKBONE_PRESETS:
        raise ConfigError('unknown backbone preset {!r}; choose from {}'.format(name, sorted(BACKBONE_PRESETS)))
    cfg = cfg.clone()
    widths, depths = BACKBONE_PRESETS[name]
    cfg.merge_from_list(['model.encoder.widths', widths, 'model.encoder.depths', depths])
    return cfg


def merge_overrides(cfg, overrides):
    """Apply `key=value` strings; unknown keys and bad types raise ConfigError."""
    flat = []
    for item in overrides:
        if '=' not in item:
            raise ConfigError('override {!r} is not key=value'.format(item))
        key, value = item.split('=', 1)
        flat += [key.strip(), value.strip()]
    return merge_list(cfg, flat)


def _default_of(cfg, key):
    node = cfg
    for part in key.split('.'):
        if not isinstance(node, CN) or part not in node:
            return None
        node = node[part]
    return node


def _coerce(default, value):
    # yacs refuses an int literal for a float key ("loss.col=0")
    if not isinstance(default, float):
        return value
    if isinstance(value, str):
        try:
            value = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            return value
    if isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def merge_list(cfg, flat):
    cfg = cfg.clone()
    flat = list(flat)
    for i in range(0, len(flat) - 1, 2):
        flat[i + 1] = _coerce(_default_of(cfg, flat[i]), flat[i + 1])
    try:
        cfg.merge_from_list(flat)
    except (KeyError, ValueError, AssertionError) as e:
        raise ConfigError(str(e)) from e
    validate_cfg(cfg)
    return cfg


def load_cfg(**kwargs):
    """Defaults, then a config file, then --set overrides."""
    from chromaquery import cqfiles
    config_file = kwargs.get('config_file', None)
    overrides = kwargs.get('overrides', ())
    cfg = get_cfg()
    if config_file:
        cfg = merge_list(cfg, cqfiles.read_config_file(config_file))
    return merge_overrides(cfg, overrides)


def cfg_from_snapshot(flat):
    """Rebuild a config from the {dotted key: value} snapshot stored in checkpoints."""
    items = []
    for key, value in flat.items():
        items += [key, value]
    return merge_list(get_cfg(), items)


def flatten_cfg(cfg, prefix=''):
    flat = {}
    for key, value in cfg.items():
        name = prefix + key
        if isinstance(value, CN):
            flat.update(flatten_cfg(value, name + '.'))
        else:
            flat[name] = value
    return flat


def validate_cfg(cfg):
    if cfg.data.resolution <= 0 or cfg.data.resolution % 32:
        raise ConfigError('data.resolution must be a positive multiple of 32, got {}'.format(cfg.data.resolution))
    if cfg.data.batch_size < 1:
        raise ConfigError('data.batch_size must be positive')
    if not 0 < cfg.data.saturation_min <= cfg.data.saturation_max:
        raise ConfigError('need 0 < data.saturation_min <= data.saturation_max')
    enc, dec, col = cfg.model.encoder, cfg.model.decoder, cfg.model.color
    if len(enc.widths) != 4 or len(enc.depths) != 4 or len(dec.widths) != 4:
        raise ConfigError('encoder and decoder need exactly four stages')
    for name, width in (('model.encoder.widths[3]', enc.widths[3]), ('model.decoder.widths[0]', dec.widths[0]),
                        ('model.decoder.widths[1]', dec.widths[1])):
        if width % 4:
            raise ConfigError('{}={} must be divisible by 4 for the ×2 pixel shuffle'.format(name, width))
    if col.enabled and col.dim != dec.widths[3]:
        raise ConfigError('model.color.dim ({}) must equal model.decoder.widths[3] ({})'.format(col.dim, dec.widths[3]))
    if col.dim % col.heads or (col.cross_heads and col.dim % col.cross_heads):
        raise ConfigError('model.color.dim must be divisible by the head counts')
    if any(s not in KNOWN_SCALES for s in col.scales):
        raise ConfigError('model.color.scales must use {}'.format(KNOWN_SCALES))
    if col.block_order not in [o.value for o in BlockOrder]:
        raise ConfigError('model.color.block_order must be one of {}'.format([o.value for o in BlockOrder]))
    if cfg.loss.gan_mode not in ('lsgan', 'vanilla', 'hinge'):
        raise ConfigError('loss.gan_mode must be lsgan, vanilla or hinge')
    if cfg.loss.extractor not in ('random', 'vgg16', 'vgg16_untrained'):
        raise ConfigError('loss.extractor must be random, vgg16 or vgg16_untrained')
    LossWeights(pix=cfg.loss.pix, per=cfg.loss.per, adv=cfg.loss.adv, col=cfg.loss.col)
    if cfg.train.lr <= 0:
        raise ConfigError('train.lr must be positive')
    if cfg.train.first_milestone < 0 or cfg.train.milestone_interval <= 0:
        raise ConfigError('lr milestones must be increasing')
    if cfg.train.d_steps < 0:
        raise ConfigError('train.d_steps must be non-negative')
    return cfg


def encoder_config(cfg):
    return EncoderConfig(widths=cfg.model.encoder.widths, depths=cfg.model.encoder.depths)


def pixel_decoder_config(cfg):
    return PixelDecoderConfig(widths=cfg.model.decoder.widths, shortcut_norm=cfg.model.decoder.shortcut_norm)


def color_decoder_config(cfg):
    col = cfg.model.color
    return ColorDecoderConfig(num_queries=col.num_queries, dim=col.dim, repeats=col.repeats, heads=col.heads,
                              cross_heads=col.cross_heads, ffn_dim=col.ffn_dim, scales=col.scales,
                              block_order=col.block_order, scaled=col.scaled)


def loss_weights(cfg):
    return LossWeights(pix=cfg.loss.pix, per=cfg.loss.per, adv=cfg.loss.adv, col=cfg.loss.col)


def build_generator(cfg):
    return Colorizer(encoder_config(cfg), pixel_decoder_config(cfg), color_decoder_config(cfg),
                     use_color_decoder=cfg.model.color.enabled,
                     concat_input=cfg.model.head.concat_input)


def build_discriminator(cfg):
    return PatchDiscriminator(input_c=3, num_filters=cfg.loss.disc_width, n_down=cfg.loss.disc_layers)


def build_extractor(cfg):
    if cfg.loss.extractor == 'random':
        return RandomConvExtractor(seed=cfg.seed)
    return VGGExtractor(pretrained=cfg.loss.extractor == 'vgg16')


def build_gan_loss(cfg):
    return GANLoss(cfg.loss.gan_mode)


def build_optimizer(cfg, module):
    return torch.optim.AdamW(module.parameters(), lr=cfg.train.lr, betas=(cfg.train.beta1, cfg.train.beta2),
                             weight_decay=cfg.train.weight_decay)


def ablation_variants(name, base_cfg):
    """[(label, cfg), ...] for one named ablation; every variant shares the base seed and budget."""
    if name == 'color_decoder_on_off':
        overrides = [('color_decoder_off', ['model.color.enabled', False]),
                     ('color_decoder_on', ['model.color.enabled', True])]
    elif name == 'colorfulness_on_off':
        overrides = [('colorfulness_off', ['loss.col', 0.0]),
                     ('colorfulness_on', ['loss.col', 0.5])]
    elif name == 'scales':
        overrides = [('single_scale_{}'.format(s), ['model.color.scales', (s, s, s)]) for s in KNOWN_SCALES]
        overrides.append(('multi_scale', ['model.color.scales', KNOWN_SCALES]))
    elif name == 'decoder_order':
        overrides = [(o.value, ['model.color.block_order', o.value]) for o in
                     (BlockOrder.SELF_SELF, BlockOrder.CROSS_CROSS, BlockOrder.SELF_CROSS, BlockOrder.CROSS_SELF)]
    elif name == 'query_count':
        overrides = [('queries_{}'.format(k), ['model.color.num_queries', k]) for k in QUERY_COUNTS]
    else:
        raise ConfigError('unknown ablation {!r}; choose from {}'.format(name, ABLATIONS))
    return [(label, merge_list(base_cfg, flat)) for label, flat in overrides]
