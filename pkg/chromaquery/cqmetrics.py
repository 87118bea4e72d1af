"""Evaluation measures: colorfulness score, ΔCF, PSNR and Fréchet distance.

The Fréchet distance is computed between Gaussian fits of embedded image
sets; the embedder is pluggable (no Inception weights are bundled), so values
are comparable only under one fixed embedder.
"""
import logging
import math

import numpy as np
import scipy.linalg
import torch
from torch import nn

from chromaquery import cqfiles, cqlosses
from chromaquery.cqdata import EmbeddingStats, EmptyDatasetError, ShapeError

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
PSD_TOLERANCE = 1e-6
IMAGINARY_TOLERANCE = 1e-3

REPORT_KEYS = ('n_images', 'n_excluded', 'cf_gen', 'cf_gt', 'delta_cf', 'psnr', 'fid')


def _as_rgb255_tensor(img):
    if isinstance(img, torch.Tensor):
        t = img.detach().double()
    else:
        # H×W×3 array on 0-255
        t = torch.from_numpy(np.asarray(img, dtype=np.float64)).permute(2, 0, 1)
    return t


def colorfulness_score(img):
    """σ_rgyb + 0.3·μ_rgyb of one RGB image on the 0-255 scale."""
    return float(cqlosses.colorfulness_score_tensor(_as_rgb255_tensor(img))[0])


def delta_cf(gen_cfs, gt_cfs):
    """|mean(gen) - mean(gt)|, a difference of split-level means."""
    gen_cfs = list(gen_cfs)
    gt_cfs = list(gt_cfs)
    if not gen_cfs or not gt_cfs:
        raise EmptyDatasetError('delta_cf needs non-empty score lists')
    return abs(float(np.mean(gen_cfs)) - float(np.mean(gt_cfs)))


def psnr(pred, target, peak=255.0, cap=PSNR_CAP):
    """10·log10(peak²/MSE) in dB; identical inputs report `cap`."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError('psnr: shapes {} and {} differ'.format(pred.shape, target.shape))
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(peak ** 2 / mse))


class RunningStats:
    """Mergeable mean/covariance accumulator (Chan et al. pairwise update)."""

    def __init__(self, dim):
        self.dim = dim
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def update(self, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if samples.shape[1] != self.dim:
            raise ShapeError('expected {}-d samples, got {}'.format(self.dim, samples.shape[1]))
        other = RunningStats(self.dim)
        other.n = samples.shape[0]
        other.mean = samples.mean(axis=0)
        centered = samples - other.mean
        other.m2 = centered.T @ centered
        self.merge(other)
        return self

    def merge(self, other):
        if other.dim != self.dim:
            raise ShapeError('cannot merge {}-d stats into {}-d stats'.format(other.dim, self.dim))
        if other.n == 0:
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.m2 = self.m2 + other.m2 + np.outer(delta, delta) * self.n * other.n / n
        self.mean = self.mean + delta * other.n / n
        self.n = n
        return self

    def finalize(self) -> EmbeddingStats:
        if self.n < 2:
            raise EmptyDatasetError('embedding statistics need n >= 2, got {}'.format(self.n))
        sigma = self.m2 / (self.n - 1)
        return EmbeddingStats(self.mean.copy(), (sigma + sigma.T) / 2.0, self.n)


def embed_statistics(images, embedder) -> EmbeddingStats:
    """Unbiased mean and covariance of embedder(image) over `images`."""
    stats = None
    for img in images:
        vec = np.asarray(embedder(img), dtype=np.float64).reshape(-1)
        if stats is None:
            stats = RunningStats(vec.shape[0])
        stats.update(vec[None, :])
    if stats is None:
        raise EmptyDatasetError('no images to embed')
    return stats.finalize()


def _sqrt_trace_eigh(sigma_a, sigma_b):
    # tr((A B)^1/2) = tr((A^1/2 B A^1/2)^1/2) for symmetric PSD A, B
    sqrt_a = _psd_sqrt(sigma_a)
    inner = sqrt_a @ sigma_b @ sqrt_a
    eig = _checked_eigvalsh((inner + inner.T) / 2.0)
    return float(np.sum(np.sqrt(eig)))


def _checked_eigvalsh(matrix):
    eig = scipy.linalg.eigh(matrix, eigvals_only=True)
    if eig.min() < -PSD_TOLERANCE:
        raise ValueError('matrix is not positive semi-definite (min eigenvalue {:.3g})'.format(eig.min()))
    return np.clip(eig, 0.0, None)


def _psd_sqrt(matrix):
    eig, vecs = scipy.linalg.eigh(matrix)
    if eig.min() < -PSD_TOLERANCE:
        raise ValueError('covariance is not positive semi-definite (min eigenvalue {:.3g})'.format(eig.min()))
    return (vecs * np.sqrt(np.clip(eig, 0.0, None))) @ vecs.T


def _sqrt_trace_sqrtm(sigma_a, sigma_b):
    covmean, _ = scipy.linalg.sqrtm(sigma_a @ sigma_b, disp=False)
    if np.iscomplexobj(covmean):
        if not np.allclose(np.diagonal(covmean).imag, 0, atol=IMAGINARY_TOLERANCE):
            raise ValueError('imaginary component {:.3g} in matrix square root'.format(
                np.max(np.abs(covmean.imag))))
        covmean = covmean.real
    return float(np.trace(covmean))


def frechet_distance(a: EmbeddingStats, b: EmbeddingStats, method='eigh'):
    """‖μ_a - μ_b‖² + Tr(Σ_a + Σ_b - 2(Σ_a Σ_b)^1/2)."""
    if a.dim != b.dim:
        raise ShapeError('cannot compare {}-d and {}-d statistics'.format(a.dim, b.dim))
    if method == 'eigh':
        cross = _sqrt_trace_eigh(a.sigma, b.sigma)
    elif method == 'sqrtm':
        cross = _sqrt_trace_sqrtm(a.sigma, b.sigma)
    else:
        raise ValueError('unknown square-root method {!r}'.format(method))
    diff = a.mu - b.mu
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * cross)
    return max(value, 0.0)


class RandomEmbedder(nn.Module):
    """Pinned random conv features, average-pooled to a d-vector per image."""

    def __init__(self, **kwargs):
        super().__init__()
        self.dim = kwargs.get('dim', 64)
        self.size = kwargs.get('size', 64)
        seed = kwargs.get('seed', 0)
        self.features = cqlosses.RandomConvExtractor(seed=seed, widths=(16, 32, 64, self.dim))

    @torch.no_grad()
    def forward(self, img):
        """img: H×W×3 array on 0-255 (or a 3×H×W tensor on 0-1)."""
        if isinstance(img, torch.Tensor):
            x = img.float().unsqueeze(0)
        else:
            x = torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0).permute(2, 0, 1).unsqueeze(0)
        x = nn.functional.interpolate(x, size=(self.size, self.size), mode='bilinear',
                                      align_corners=False, antialias=True)
        return self.features(x)[-1].mean(dim=(2, 3))[0].numpy()


def evaluate_directories(gen_dir, gt_dir, **kwargs):
    """CF / ΔCF / PSNR (and Fréchet distance with an embedder) for two folders
    aligned by file name.

    Names present on one side only, and same-name pairs whose sizes differ,
    are excluded with a warning and listed under 'excluded'. The Fréchet
    distance needs two images per side; with fewer it is reported as None.
    """
    peak = kwargs.get('peak', 255.0)
    embedder = kwargs.get('embedder', None)
    gen_files = {p.name: p for p in cqfiles.list_images(gen_dir)}
    gt_files = {p.name: p for p in cqfiles.list_images(gt_dir)}
    common = sorted(set(gen_files) & set(gt_files))
    excluded = sorted(set(gen_files) ^ set(gt_files))
    for name in excluded:
        log.warning('no counterpart for %s, excluded', name)
    gen_cfs, gt_cfs, psnrs = [], [], []
    gen_images, gt_images = [], []
    for name in common:
        gen = cqfiles.load_image(gen_files[name]).to_uint8().astype(np.float64)
        gt = cqfiles.load_image(gt_files[name]).to_uint8().astype(np.float64)
        if gen.shape != gt.shape:
            log.warning('%s is %s in one folder and %s in the other, excluded', name, gen.shape[:2], gt.shape[:2])
            excluded.append(name)
            continue
        gen_cfs.append(colorfulness_score(gen))
        gt_cfs.append(colorfulness_score(gt))
        if peak == 1.0:
            psnrs.append(psnr(gen / 255.0, gt / 255.0, peak=1.0))
        else:
            psnrs.append(psnr(gen, gt, peak=peak))
        if embedder is not None:
            gen_images.append(gen)
            gt_images.append(gt)
    if not psnrs:
        raise EmptyDatasetError('no comparable image pairs in {} and {}'.format(gen_dir, gt_dir))
    report = {
        'n_images': len(psnrs),
        'n_excluded': len(excluded),
        'cf_gen': float(np.mean(gen_cfs)),
        'cf_gt': float(np.mean(gt_cfs)),
        'delta_cf': delta_cf(gen_cfs, gt_cfs),
        'psnr': float(np.mean(psnrs)),
        'fid': None,
    }
    if embedder is not None:
        if len(gen_images) < 2:
            log.warning('Fréchet distance needs at least 2 image pairs, got %d; skipped', len(gen_images))
        else:
            report['fid'] = frechet_distance(embed_statistics(gen_images, embedder),
                                             embed_statistics(gt_images, embedder))
    report['excluded'] = sorted(excluded)
    return report
