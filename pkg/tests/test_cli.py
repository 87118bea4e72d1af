import json

import numpy as np
import pytest
import torch
from PIL import Image

from chromaquery import cqcli
from conftest import write_png

TRAIN_SETTINGS = ['--set', 'train.total_iters=2', '--set', 'data.synthetic_size=2', '--set', 'data.batch_size=2',
                  '--set', 'data.prefetch=0', '--set', 'model.encoder.depths=(1, 1, 1, 1)']


@pytest.fixture(scope='module')
def checkpoint(tmp_path_factory):
    run = tmp_path_factory.mktemp('run')
    assert cqcli.main(['train', '--output-dir', str(run)] + TRAIN_SETTINGS) == 0
    return run / 'checkpoint.pt'


def test_train_writes_run_directory(checkpoint):
    run = checkpoint.parent
    assert checkpoint.is_file()
    assert (run / 'train.log').read_text(encoding='utf-8').startswith('iter, lr,')
    assert 'train.total_iters = 2' in (run / 'config.txt').read_text(encoding='utf-8')


def test_colorize_folder(checkpoint, image_dir, tmp_path):
    out = tmp_path / 'out'
    assert cqcli.main(['colorize', str(checkpoint), str(image_dir), str(out), '--raw']) == 0
    for src in image_dir.iterdir():
        result = Image.open(out / (src.stem + '.png'))
        assert result.size == Image.open(src).size
        assert result.mode == 'RGB'
        lab = np.load(out / (src.stem + '.npy'))
        assert lab.shape == (result.size[1], result.size[0], 3)


def test_colorize_is_deterministic_and_keeps_luminance(checkpoint, tmp_path, rng):
    src = write_png(tmp_path / 'in' / 'photo.png', rng.integers(0, 256, (40, 72, 3)))
    for name in ('a', 'b'):
        assert cqcli.main(['colorize', str(checkpoint), str(src), str(tmp_path / name), '--raw']) == 0
    first = np.load(tmp_path / 'a' / 'photo.npy')
    np.testing.assert_array_equal(first, np.load(tmp_path / 'b' / 'photo.npy'))
    x_L = cqcli.luminance_of(cqcli.cqfiles.load_image(src))[0, 0].numpy()
    np.testing.assert_array_equal(first[..., 0], x_L)


def test_colorize_partial_failure(checkpoint, image_dir, tmp_path):
    (image_dir / 'zz_broken.png').write_bytes(b'garbage')
    out = tmp_path / 'out'
    assert cqcli.main(['colorize', str(checkpoint), str(image_dir), str(out)]) == 2
    assert len(list(out.glob('*.png'))) == 5


def test_colorize_missing_checkpoint(image_dir, tmp_path):
    assert cqcli.main(['colorize', str(tmp_path / 'nope.pt'), str(image_dir), str(tmp_path / 'out')]) == 1


def test_corrupt_checkpoint_is_fatal(image_dir, tmp_path):
    bad = tmp_path / 'bad.pt'
    bad.write_bytes(b'not a checkpoint')
    assert cqcli.main(['colorize', str(bad), str(image_dir), str(tmp_path / 'out')]) == 3


def test_visualize_queries(checkpoint, tmp_path, rng):
    src = write_png(tmp_path / 'img.png', rng.integers(0, 256, (64, 48, 3)))
    out = tmp_path / 'maps'
    assert cqcli.main(['visualize-queries', str(checkpoint), str(src), str(out), '--raw']) == 0
    assert sorted(p.name for p in out.glob('query_*.png')) == ['query_{:03d}.png'.format(k) for k in range(16)]
    assert (out / 'colorized.png').is_file()
    maps = np.load(out / 'query_maps.npy')
    assert maps.shape == (16, 64, 48)
    assert maps.min() >= 0 and maps.max() <= 1


def test_metrics_identical(image_dir, tmp_path, capsys):
    report_path = tmp_path / 'report.json'
    assert cqcli.main(['metrics', str(image_dir), str(image_dir), '--embedder', 'random',
                       '--output', str(report_path)]) == 0
    lines = dict(line.split('=', 1) for line in capsys.readouterr().out.splitlines())
    assert float(lines['delta_cf']) == 0.0
    assert float(lines['psnr']) == 100.0
    report = json.loads(report_path.read_text(encoding='utf-8'))
    assert report['n_images'] == 5
    assert report_path.with_suffix('.txt').is_file()


def test_metrics_disjoint_is_fatal(tmp_path, rng):
    write_png(tmp_path / 'gen' / 'a.png', rng.integers(0, 256, (8, 8, 3)))
    write_png(tmp_path / 'gt' / 'b.png', rng.integers(0, 256, (8, 8, 3)))
    assert cqcli.main(['metrics', str(tmp_path / 'gen'), str(tmp_path / 'gt')]) == 3


def test_usage_errors(tmp_path):
    assert cqcli.main([]) == 1
    assert cqcli.main(['paint']) == 1
    assert cqcli.main(['train', '--set', 'train.bogus=1']) == 1
    assert cqcli.main(['ablate', 'dropout']) == 1
    assert cqcli.main(['metrics', str(tmp_path / 'x'), str(tmp_path / 'y')]) == 1


def test_ablate(tmp_path, capsys):
    assert cqcli.main(['ablate', 'colorfulness_on_off', '--iters', '1', '--output-dir', str(tmp_path)]
                      + TRAIN_SETTINGS) == 0
    assert 'colorfulness_on' in capsys.readouterr().out
    assert (tmp_path / 'ablation_colorfulness_on_off.json').is_file()


def test_padding_contract():
    x = torch.arange(2 * 40 * 50, dtype=torch.float32).view(1, 2, 40, 50)
    padded, (h, w) = cqcli.pad_to_multiple(x)
    assert padded.shape == (1, 2, 64, 64) and (h, w) == (40, 50)
    assert torch.equal(padded[..., :h, :w], x)
    tiny, _ = cqcli.pad_to_multiple(torch.rand(1, 1, 5, 5))
    assert tiny.shape == (1, 1, 32, 32)


def test_resume_applies_train_overrides(checkpoint, tmp_path):
    out = tmp_path / 'resumed'
    assert cqcli.main(['train', '--resume', str(checkpoint), '--output-dir', str(out),
                       '--set', 'train.total_iters=4']) == 0
    payload = cqcli.cqfiles.load_checkpoint(out / 'checkpoint.pt')
    assert payload['iteration'] == 4
    assert payload['config']['train.total_iters'] == 4


def test_resume_rejects_model_overrides_and_config_files(checkpoint, tmp_path):
    out = str(tmp_path / 'resumed')
    assert cqcli.main(['train', '--resume', str(checkpoint), '--output-dir', out,
                       '--set', 'model.color.num_queries=8']) == 1
    cfg_file = tmp_path / 'run.cfg'
    cfg_file.write_text('train.total_iters = 3\n', encoding='utf-8')
    assert cqcli.main(['train', '--resume', str(checkpoint), '--output-dir', out,
                       '--config', str(cfg_file)]) == 1


def test_colorize_keeps_inputs_sharing_a_stem_apart(checkpoint, tmp_path, rng):
    src = tmp_path / 'in'
    write_png(src / 'a.png', rng.integers(0, 256, (32, 32, 3)))
    Image.fromarray(rng.integers(0, 256, (32, 32, 3)).astype(np.uint8)).save(src / 'a.jpg')
    write_png(src / 'b.png', rng.integers(0, 256, (32, 32, 3)))
    out = tmp_path / 'out'
    assert cqcli.main(['colorize', str(checkpoint), str(src), str(out)]) == 0
    assert sorted(p.name for p in out.glob('*.png')) == ['a_jpg.png', 'a_png.png', 'b.png']


def test_metrics_single_pair_with_embedder_keeps_report(tmp_path, rng, capsys):
    img = rng.integers(0, 256, (16, 16, 3))
    write_png(tmp_path / 'gen' / 'a.png', img)
    write_png(tmp_path / 'gt' / 'a.png', img)
    code = cqcli.main(['metrics', str(tmp_path / 'gen'), str(tmp_path / 'gt'), '--embedder', 'random'])
    assert code == 2
    lines = dict(line.split('=', 1) for line in capsys.readouterr().out.splitlines())
    assert float(lines['psnr']) == 100.0
    assert float(lines['delta_cf']) == 0.0
    assert lines['fid'] == 'none'


def test_metrics_size_mismatch_is_partial(tmp_path, rng):
    for name in ('a.png', 'b.png'):
        write_png(tmp_path / 'gen' / name, rng.integers(0, 256, (16, 16, 3)))
    write_png(tmp_path / 'gt' / 'a.png', rng.integers(0, 256, (16, 16, 3)))
    write_png(tmp_path / 'gt' / 'b.png', rng.integers(0, 256, (20, 16, 3)))
    assert cqcli.main(['metrics', str(tmp_path / 'gen'), str(tmp_path / 'gt')]) == 2
