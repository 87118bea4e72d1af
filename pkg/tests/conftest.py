import numpy as np
import pytest
import torch
from PIL import Image

from chromaquery import cqmethods


@pytest.fixture
def tiny_cfg():
    """Desk config trimmed further so a training step takes well under a second."""
    return cqmethods.merge_overrides(cqmethods.get_cfg(), [
        'data.batch_size=2',
        'data.synthetic_size=4',
        'data.prefetch=0',
        'model.encoder.depths=(1, 1, 1, 1)',
        'train.total_iters=4',
        'train.eval_batches=1',
        "train.output_dir=''",
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def write_png(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8), mode='RGB').save(path)
    return path


@pytest.fixture
def image_dir(tmp_path, rng):
    """Five random color PNGs of mixed sizes."""
    root = tmp_path / 'images'
    for i, (h, w) in enumerate([(64, 64), (80, 96), (96, 64), (64, 64), (70, 50)]):
        write_png(root / 'img_{}.png'.format(i), rng.integers(0, 256, (h, w, 3)))
    return root
