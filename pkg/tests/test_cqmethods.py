import pytest
import torch

from chromaquery import cqfiles, cqmethods
from chromaquery.cqdata import ConfigError


def test_overrides_are_typed():
    cfg = cqmethods.merge_overrides(cqmethods.get_cfg(), [
        'train.lr=3e-4', 'model.color.scales=(8, 8, 8)', 'data.augment=True', "loss.gan_mode=hinge"])
    assert cfg.train.lr == 3e-4
    assert tuple(cfg.model.color.scales) == (8, 8, 8)
    assert cfg.data.augment is True
    assert cfg.loss.gan_mode == 'hinge'


def test_int_literals_accepted_for_float_keys(tmp_path):
    cfg = cqmethods.merge_overrides(cqmethods.get_cfg(), ['loss.col=0', 'loss.adv=0', 'train.lr=1'])
    assert cfg.loss.col == 0.0 and isinstance(cfg.loss.col, float)
    assert cfg.loss.adv == 0.0
    assert cfg.train.lr == 1.0 and isinstance(cfg.train.lr, float)
    path = tmp_path / 'run.cfg'
    path.write_text('loss.per = 2\n', encoding='utf-8')
    assert cqmethods.load_cfg(config_file=str(path)).loss.per == 2.0
    with pytest.raises(ConfigError):
        cqmethods.merge_overrides(cqmethods.get_cfg(), ['loss.col=True'])


@pytest.mark.parametrize('override', [
    'train.nope=1',
    'train.lr=fast',
    'data.resolution=48',
    'model.color.dim=24',
    'model.color.block_order=mlp_first',
    'loss.col=-1.0',
    'no_equals_sign',
])
def test_bad_overrides(override):
    with pytest.raises(ConfigError):
        cqmethods.merge_overrides(cqmethods.get_cfg(), [override])


def test_defaults_are_left_alone():
    cqmethods.merge_overrides(cqmethods.get_cfg(), ['seed=5'])
    assert cqmethods.get_cfg().seed == 0


def test_reference_plan():
    cfg = cqmethods.reference_cfg()
    assert cfg.model.encoder.widths == (96, 192, 384, 768)
    assert cfg.model.color.num_queries == 100 and cfg.model.color.dim == 256
    assert cfg.model.color.repeats == 3
    assert cqmethods.validate_cfg(cfg) is cfg


def test_backbone_presets():
    cfg = cqmethods.backbone_preset(cqmethods.get_cfg(), 'large')
    assert cfg.model.encoder.widths == (192, 384, 768, 1536)
    assert cfg.model.encoder.depths == (3, 3, 27, 3)
    with pytest.raises(ConfigError):
        cqmethods.backbone_preset(cqmethods.get_cfg(), 'huge')


def test_config_file_then_overrides(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('# desk run\nseed = 3\ntrain.total_iters = 50  # short\nmodel.color.num_queries = 8\n',
                    encoding='utf-8')
    cfg = cqmethods.load_cfg(config_file=str(path), overrides=['seed=4'])
    assert cfg.seed == 4
    assert cfg.train.total_iters == 50
    assert cfg.model.color.num_queries == 8


def test_snapshot_round_trip(tmp_path):
    cfg = cqmethods.merge_overrides(cqmethods.get_cfg(), ['model.color.num_queries=20', 'loss.col=0.0'])
    flat = cqmethods.flatten_cfg(cfg)
    assert flat['model.color.num_queries'] == 20
    assert cqmethods.cfg_from_snapshot(flat) == cfg
    cqfiles.write_config_file(tmp_path / 'snap.cfg', flat)
    assert cqmethods.load_cfg(config_file=str(tmp_path / 'snap.cfg')) == cfg


@pytest.mark.parametrize('name,count', [
    ('color_decoder_on_off', 2),
    ('colorfulness_on_off', 2),
    ('scales', 4),
    ('decoder_order', 4),
    ('query_count', 5),
])
def test_ablation_variant_counts(name, count):
    variants = cqmethods.ablation_variants(name, cqmethods.get_cfg())
    assert len(variants) == count
    assert len({label for label, _ in variants}) == count
    assert all(cfg.seed == 0 for _, cfg in variants)


def test_ablation_variant_contents():
    queries = [cfg.model.color.num_queries for _, cfg in cqmethods.ablation_variants('query_count', cqmethods.get_cfg())]
    assert queries == [20, 50, 100, 200, 500]
    scales = [tuple(cfg.model.color.scales) for _, cfg in cqmethods.ablation_variants('scales', cqmethods.get_cfg())]
    assert scales == [(16, 16, 16), (8, 8, 8), (4, 4, 4), (16, 8, 4)]
    with pytest.raises(ConfigError):
        cqmethods.ablation_variants('dropout', cqmethods.get_cfg())


def test_builders():
    cfg = cqmethods.get_cfg()
    generator = cqmethods.build_generator(cfg)
    optimizer = cqmethods.build_optimizer(cfg, generator)
    assert isinstance(optimizer, torch.optim.AdamW)
    group = optimizer.param_groups[0]
    assert group['betas'] == (0.9, 0.99) and group['weight_decay'] == 0.01 and group['lr'] == 1e-4
    assert cqmethods.build_discriminator(cfg)(torch.rand(1, 3, 64, 64)).shape[1] == 1
    assert cqmethods.loss_weights(cfg).as_terms() == (0.1, 5.0, 1.0, 0.5)
