"""Everything that touches disk: images, heatmaps, reports, config files and
checkpoints. 8-bit quantization happens only here."""
import json
import logging
import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from chromaquery.cqdata import ChromaQueryError, EmptyDatasetError, RgbImage

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.png', '.jpg', '.jpeg')
CHECKPOINT_FORMAT = 'chromaquery-checkpoint'
CHECKPOINT_VERSION = 1


class CheckpointError(ChromaQueryError):
    pass


def list_images(root, manifest=None):
    """Image paths under `root`, sorted; restricted to the manifest's relative
    paths when one is given."""
    root = Path(root)
    if manifest:
        return [root / rel for rel in read_manifest(manifest)]
    if not root.is_dir():
        raise EmptyDatasetError('{} is not a directory'.format(root))
    return sorted(p for p in root.rglob('*') if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def read_manifest(path):
    with open(path, 'r', encoding='utf-8') as myfile:
        lines = [line.strip() for line in myfile]
    return [line for line in lines if line and not line.startswith('#')]


def is_decodable(path):
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except (OSError, UnidentifiedImageError) as e:
        log.warning('skipping unreadable image %s: %s', path, e)
        return False


def open_image(path):
    """PIL image in RGB mode; grayscale sources are replicated to three channels."""
    with Image.open(path) as img:
        return img.convert('RGB')


def load_image(path):
    return RgbImage.from_uint8(np.asarray(open_image(path)))


def save_image(path, rgb):
    """Write an RgbImage (or H×W×3 array in [0, 1]) as an 8-bit PNG."""
    if not isinstance(rgb, RgbImage):
        rgb = RgbImage(rgb)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb.to_uint8(), mode='RGB').save(path)


def save_raw(path, array):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.save(path, np.asarray(array, dtype=np.float32))


def save_heatmap(path, values, cmap='viridis'):
    """Colormapped PNG of an H×W map with values in [0, 1]."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, np.asarray(values, dtype=np.float32), cmap=cmap, vmin=0.0, vmax=1.0)


def read_config_file(path):
    """`key = value` lines as a flat [key, value, key, value, ...] list for
    CfgNode.merge_from_list."""
    pairs = []
    with open(path, 'r', encoding='utf-8') as myfile:
        for n, raw in enumerate(myfile, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ValueError('{}:{}: expected "key = value", got {!r}'.format(path, n, raw.rstrip()))
            key, value = line.split('=', 1)
            pairs += [key.strip(), value.strip()]
    return pairs


def write_config_file(path, flat):
    """Inverse of read_config_file for a {dotted key: value} mapping."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as myfile:
        for key, value in flat.items():
            myfile.write('{} = {!r}\n'.format(key, value))


def write_report(path, report):
    """Structured JSON at `path` plus the same keys as key=value lines beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as myfile:
        json.dump(report, myfile, indent=2, sort_keys=True)
    with open(path.with_suffix('.txt'), 'w', encoding='utf-8') as myfile:
        myfile.write(format_report_lines(report))


def format_report_lines(report):
    lines = []
    for key, value in report.items():
        if isinstance(value, (list, dict)):
            continue
        lines.append('{}={}'.format(key, 'none' if value is None else value))
    return '\n'.join(lines) + '\n'


def append_log_line(path, values, header=None):
    path = Path(path)
    new_file = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'a', encoding='utf-8') as myfile:
        if new_file and header:
            myfile.write(', '.join(header) + '\n')
        myfile.write(', '.join(_format_value(v) for v in values) + '\n')


def _format_value(value):
    if isinstance(value, float):
        return '{:.6g}'.format(value)
    return str(value)


def save_checkpoint(path, **kwargs):
    """Single-file container: named tensors for each state dict plus metadata.

    Written to a temporary name and renamed, so a crash never leaves a
    half-written file behind the last good one.
    """
    payload = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'iteration': kwargs.get('iteration', 0),
        'config': kwargs.get('config', ''),
        'generator': kwargs.get('generator'),
        'discriminator': kwargs.get('discriminator'),
        'optim_g': kwargs.get('optim_g'),
        'optim_d': kwargs.get('optim_d'),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + '.tmp')
    torch.save(payload, tmp)
    os.replace(tmp, path)
    log.info('saved checkpoint %s (iteration %d)', path, payload['iteration'])
    return path


def load_checkpoint(path, map_location='cpu'):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError('checkpoint {} does not exist'.format(path))
    try:
        payload = torch.load(path, map_location=map_location, weights_only=False)
    except Exception as e:
        raise CheckpointError('cannot read checkpoint {}: {}'.format(path, e)) from e
    if not isinstance(payload, dict) or payload.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError('{} is not a chromaquery checkpoint'.format(path))
    if payload.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError('checkpoint version {} is not supported (expected {})'.format(
            payload.get('version'), CHECKPOINT_VERSION))
    return payload
