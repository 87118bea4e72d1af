"""Training pairs: enumerate images (or draw synthetic ones), center-crop,
resize, optionally jitter colors, convert to Lab and batch as (x_L, y_AB)."""
import logging
import math
import queue
import threading

import numpy as np
import torch
from PIL import Image, ImageDraw
from torch.utils.data import DataLoader, Dataset, RandomSampler

from chromaquery import cqcolorspace, cqfiles
from chromaquery.cqdata import Batch, ConfigError, EmptyDatasetError, RgbImage

log = logging.getLogger(__name__)

# luminance row of the linear sRGB -> XYZ matrix
_LUMA = torch.tensor([0.2126729, 0.7151522, 0.0721750]).view(3, 1, 1)

_WARM = ((220, 60, 40), (240, 170, 30), (200, 40, 120), (250, 220, 60))
_COOL = ((40, 90, 220), (30, 170, 160), (110, 60, 200), (60, 200, 90))
_BACKGROUNDS = ((120, 180, 230), (90, 150, 70), (200, 190, 160), (60, 60, 80))


class DatasetSpec:
    def __init__(self, **kwargs):
        self.root = kwargs.get('root', '')
        self.manifest = kwargs.get('manifest', '')
        self.resolution = kwargs.get('resolution', 64)
        self.batch_size = kwargs.get('batch_size', 8)
        self.augment = kwargs.get('augment', False)
        self.seed = kwargs.get('seed', 0)
        self.shuffle = kwargs.get('shuffle', True)
        self.hue_degrees = kwargs.get('hue_degrees', 18.0)
        self.saturation_range = tuple(kwargs.get('saturation_range', (0.7, 1.3)))
        self.synthetic_size = kwargs.get('synthetic_size', 500)
        self.num_workers = kwargs.get('num_workers', 0)
        self.prefetch = kwargs.get('prefetch', 2)
        if self.resolution <= 0 or self.resolution % 32:
            raise ConfigError('resolution must be a positive multiple of 32, got {}'.format(self.resolution))
        if self.batch_size < 1:
            raise ConfigError('batch_size must be positive, got {}'.format(self.batch_size))

    @classmethod
    def from_cfg(cls, cfg, **kwargs):
        options = dict(root=cfg.data.root, manifest=cfg.data.manifest, resolution=cfg.data.resolution,
                       batch_size=cfg.data.batch_size, augment=cfg.data.augment, seed=cfg.seed,
                       hue_degrees=cfg.data.hue_degrees,
                       saturation_range=(cfg.data.saturation_min, cfg.data.saturation_max),
                       synthetic_size=cfg.data.synthetic_size, num_workers=cfg.data.num_workers,
                       prefetch=cfg.data.prefetch)
        options.update(kwargs)
        return cls(**options)


def center_crop_resize(img: Image.Image, resolution):
    """Square center crop, then bilinear resize (antialiased when shrinking)."""
    w, h = img.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    if side == resolution:
        return img
    return img.resize((resolution, resolution), Image.Resampling.BILINEAR)


def _gamut_map(linear):
    # slide each out-of-gamut pixel toward the gray of equal luminance; Y is kept exactly
    y = (_LUMA.to(linear.dtype) * linear).sum(dim=0, keepdim=True).clamp(0.0, 1.0)
    over = linear > 1.0
    under = linear < 0.0
    t = torch.ones_like(linear)
    t = torch.where(over, (1.0 - y) / (linear - y).clamp(min=1e-12), t)
    t = torch.where(under, y / (y - linear).clamp(min=1e-12), t)
    t = t.amin(dim=0, keepdim=True).clamp(0.0, 1.0)
    return y + t * (linear - y)


def color_augment(img: RgbImage, seed, **kwargs) -> RgbImage:
    """Hue rotation and saturation scaling of the AB plane.

    The draw is fully determined by `seed` (an int or a sequence of ints).
    `magnitude` scales both jitters; 0 returns an unchanged copy.
    """
    magnitude = kwargs.get('magnitude', 1.0)
    hue_degrees = kwargs.get('hue_degrees', 18.0)
    sat_lo, sat_hi = kwargs.get('saturation_range', (0.7, 1.3))
    if magnitude == 0:
        return RgbImage(img.pixels.copy())
    rng = np.random.default_rng(seed)
    theta = math.radians(rng.uniform(-hue_degrees, hue_degrees) * magnitude)
    scale = 1.0 + (rng.uniform(sat_lo, sat_hi) - 1.0) * magnitude
    lab = cqcolorspace.rgb_to_lab(img.to_tensor().double())
    L, a, b = lab.unbind(dim=0)
    cos, sin = math.cos(theta), math.sin(theta)
    a2 = scale * (a * cos - b * sin)
    b2 = scale * (a * sin + b * cos)
    linear = cqcolorspace.lab_to_linear(torch.stack([L, a2, b2], dim=0))
    rgb = cqcolorspace.linear_to_srgb(_gamut_map(linear)).clamp(0.0, 1.0)
    return RgbImage.from_tensor(rgb)


class _PairDataset(Dataset):
    """Base: turns the RgbImage of item `index` into (x_L, y_AB, id)."""

    def __init__(self, spec: DatasetSpec):
        self.spec = spec
        self.epoch = 0

    def set_epoch(self, epoch):
        self.epoch = epoch

    def load_rgb(self, index) -> RgbImage:
        raise NotImplementedError

    def item_id(self, index):
        return str(index)

    def __getitem__(self, index):
        rgb = self.load_rgb(index)
        if self.spec.augment:
            rgb = color_augment(rgb, (self.spec.seed, self.epoch, index),
                                hue_degrees=self.spec.hue_degrees,
                                saturation_range=self.spec.saturation_range)
        lab = cqcolorspace.rgb_to_lab(rgb.to_tensor())
        x_L, y_AB = cqcolorspace.split_luminance(lab)
        return x_L.contiguous(), y_AB.contiguous(), self.item_id(index)


class ColorizationDataset(_PairDataset):
    def __init__(self, spec: DatasetSpec):
        super().__init__(spec)
        candidates = cqfiles.list_images(spec.root, spec.manifest or None)
        self.paths = [p for p in candidates if cqfiles.is_decodable(p)]
        skipped = len(candidates) - len(self.paths)
        if skipped:
            log.warning('%d of %d images under %s could not be decoded', skipped, len(candidates), spec.root)
        if not self.paths:
            raise EmptyDatasetError('no decodable images under {}'.format(spec.root))
        log.info('dataset %s: %d images at %d²', spec.root, len(self.paths), spec.resolution)

    def __len__(self):
        return len(self.paths)

    def item_id(self, index):
        return self.paths[index].stem

    def load_rgb(self, index):
        img = center_crop_resize(cqfiles.open_image(self.paths[index]), self.spec.resolution)
        return RgbImage.from_uint8(np.asarray(img))


class SyntheticShapes(_PairDataset):
    """Procedural toy set: warm rectangles and cool ellipses over a few
    background tones, so hue is partly predictable from shape and brightness."""

    def __init__(self, spec: DatasetSpec):
        super().__init__(spec)
        if spec.synthetic_size < 1:
            raise EmptyDatasetError('synthetic dataset needs at least one image')

    def __len__(self):
        return self.spec.synthetic_size

    def item_id(self, index):
        return 'shape_{:05d}'.format(index)

    def draw(self, index):
        rng = np.random.default_rng([self.spec.seed, index])
        size = self.spec.resolution
        img = Image.new('RGB', (size, size), _jitter(rng, _BACKGROUNDS))
        canvas = ImageDraw.Draw(img)
        for _ in range(rng.integers(2, 7)):
            x0, x1 = sorted(rng.integers(0, size, 2))
            y0, y1 = sorted(rng.integers(0, size, 2))
            box = (int(x0), int(y0), int(max(x1, x0 + 4)), int(max(y1, y0 + 4)))
            if rng.random() < 0.5:
                canvas.rectangle(box, fill=_jitter(rng, _WARM))
            else:
                canvas.ellipse(box, fill=_jitter(rng, _COOL))
        return img

    def load_rgb(self, index):
        return RgbImage.from_uint8(np.asarray(self.draw(index)))


def _jitter(rng, palette):
    base = np.asarray(palette[rng.integers(len(palette))])
    return tuple(int(v) for v in np.clip(base + rng.integers(-20, 21, 3), 0, 255))


def collate_batch(items):
    x_L, y_AB, ids = zip(*items)
    return Batch(torch.stack(x_L), torch.stack(y_AB), ids)


class Prefetcher:
    """Runs an iterable on a background thread behind a bounded queue.

    Items come out in the producer's order; exceptions raised by the
    producer are re-raised in the consumer.
    """

    _DONE = object()

    def __init__(self, iterable, depth=2):
        self.iterable = iterable
        self.depth = depth

    def __iter__(self):
        if self.depth <= 0:
            yield from self.iterable
            return
        items = queue.Queue(maxsize=self.depth)
        stop = threading.Event()

        def produce():
            try:
                for item in self.iterable:
                    if stop.is_set():
                        return
                    items.put(item)
                items.put(self._DONE)
            except BaseException as e:
                items.put(e)

        worker = threading.Thread(target=produce, name='chromaquery-prefetch', daemon=True)
        worker.start()
        try:
            while True:
                item = items.get()
                if item is self._DONE:
                    break
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            stop.set()
            # unblock a producer waiting on a full queue
            while worker.is_alive():
                try:
                    items.get_nowait()
                except queue.Empty:
                    worker.join(timeout=0.05)


class BatchLoader:
    """Re-iterable batch source; each pass is one epoch with its own seeded order."""

    def __init__(self, dataset: _PairDataset, spec: DatasetSpec):
        self.dataset = dataset
        self.spec = spec
        self.epoch = 0

    def set_epoch(self, epoch):
        self.epoch = epoch

    def __len__(self):
        return math.ceil(len(self.dataset) / self.spec.batch_size)

    def __iter__(self):
        self.dataset.set_epoch(self.epoch)
        sampler = None
        if self.spec.shuffle:
            generator = torch.Generator().manual_seed(self.spec.seed * 1000003 + self.epoch)
            sampler = RandomSampler(self.dataset, generator=generator)
        loader = DataLoader(self.dataset, batch_size=self.spec.batch_size, sampler=sampler,
                            num_workers=self.spec.num_workers, collate_fn=collate_batch, drop_last=False)
        return iter(Prefetcher(loader, depth=self.spec.prefetch))


def build_dataset(spec: DatasetSpec) -> BatchLoader:
    """Image folder when spec.root is set, procedural shapes otherwise."""
    dataset = ColorizationDataset(spec) if spec.root else SyntheticShapes(spec)
    return BatchLoader(dataset, spec)
