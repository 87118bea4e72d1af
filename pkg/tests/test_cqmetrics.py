import numpy as np
import pytest

from chromaquery import cqmetrics
from chromaquery.cqdata import EmbeddingStats, EmptyDatasetError, ShapeError
from conftest import write_png


def stats_1d(mu, var):
    return EmbeddingStats([mu], [[var]], n=2)


def test_frechet_analytic_cases():
    assert cqmetrics.frechet_distance(stats_1d(0, 1), stats_1d(0, 1)) < 1e-6
    assert cqmetrics.frechet_distance(stats_1d(0, 1), stats_1d(3, 1)) == pytest.approx(9.0, abs=1e-6)
    assert cqmetrics.frechet_distance(stats_1d(0, 1), stats_1d(0, 4)) == pytest.approx(1.0, abs=1e-6)


def test_frechet_routes_agree(rng):
    a = rng.standard_normal((200, 6))
    b = rng.standard_normal((150, 6)) * 1.5 + 0.3
    sa = cqmetrics.RunningStats(6).update(a).finalize()
    sb = cqmetrics.RunningStats(6).update(b).finalize()
    eigh = cqmetrics.frechet_distance(sa, sb)
    sqrtm = cqmetrics.frechet_distance(sa, sb, method='sqrtm')
    assert eigh == pytest.approx(sqrtm, rel=1e-6)
    assert cqmetrics.frechet_distance(sa, sa) < 1e-6


def test_frechet_rejects_indefinite_and_mismatched():
    bad = EmbeddingStats([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]], n=3)
    good = EmbeddingStats([0.0, 0.0], np.eye(2), n=3)
    with pytest.raises(ValueError):
        cqmetrics.frechet_distance(bad, good)
    with pytest.raises(ShapeError):
        cqmetrics.frechet_distance(good, stats_1d(0, 1))


def test_running_stats_merge_matches_batch(rng):
    data = rng.standard_normal((120, 4))
    left = cqmetrics.RunningStats(4).update(data[:50])
    right = cqmetrics.RunningStats(4).update(data[50:])
    merged = left.merge(right).finalize()
    np.testing.assert_allclose(merged.mu, data.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(merged.sigma, np.cov(data, rowvar=False), atol=1e-12)
    with pytest.raises(EmptyDatasetError):
        cqmetrics.RunningStats(4).update(data[:1]).finalize()


def test_embed_statistics_matches_numpy(rng):
    data = rng.standard_normal((30, 3))
    stats = cqmetrics.embed_statistics(list(data), lambda v: v * 2.0)
    np.testing.assert_allclose(stats.mu, 2.0 * data.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(stats.sigma, 4.0 * np.cov(data, rowvar=False), atol=1e-12)
    assert stats.n == 30
    with pytest.raises(EmptyDatasetError):
        cqmetrics.embed_statistics([], lambda v: v)


def test_delta_cf_consistent_with_published_pairs():
    # (CF, ΔCF) triples as reported for three methods on one validation split
    rows = [(31.60, 6.61), (38.48, 0.27), (38.26, 0.05)]
    gt_mean = 38.21
    for cf, dcf in rows:
        assert cqmetrics.delta_cf([cf], [gt_mean]) == pytest.approx(dcf, abs=0.15)
    with pytest.raises(EmptyDatasetError):
        cqmetrics.delta_cf([], [1.0])


def test_psnr():
    a = np.zeros((4, 4, 3))
    assert cqmetrics.psnr(a, a) == cqmetrics.PSNR_CAP
    assert cqmetrics.psnr(a, a + 1.0) == pytest.approx(48.13, abs=0.01)
    with pytest.raises(ShapeError):
        cqmetrics.psnr(a, a[:2])


def test_colorfulness_score_of_arrays():
    gray = np.full((8, 8, 3), 90.0)
    red = np.zeros((8, 8, 3))
    red[..., 0] = 255
    assert cqmetrics.colorfulness_score(gray) == 0.0
    assert cqmetrics.colorfulness_score(red) == pytest.approx(85.53, abs=0.01)


def test_random_embedder_is_deterministic(rng):
    img = rng.integers(0, 256, (40, 30, 3)).astype(np.float64)
    a = cqmetrics.RandomEmbedder(dim=16, seed=2)(img)
    b = cqmetrics.RandomEmbedder(dim=16, seed=2)(img)
    assert a.shape == (16,)
    np.testing.assert_array_equal(a, b)


def test_evaluate_identical_directories(image_dir):
    report = cqmetrics.evaluate_directories(image_dir, image_dir, embedder=cqmetrics.RandomEmbedder(dim=8))
    assert report['n_images'] == 5 and report['n_excluded'] == 0
    assert report['delta_cf'] == 0.0
    assert report['psnr'] == cqmetrics.PSNR_CAP
    assert report['fid'] < 1e-6
    assert set(cqmetrics.REPORT_KEYS) <= set(report)


def test_evaluate_excludes_unmatched(tmp_path, rng):
    for name in ('a.png', 'b.png'):
        write_png(tmp_path / 'gen' / name, rng.integers(0, 256, (16, 16, 3)))
    for name in ('b.png', 'c.png'):
        write_png(tmp_path / 'gt' / name, rng.integers(0, 256, (16, 16, 3)))
    report = cqmetrics.evaluate_directories(tmp_path / 'gen', tmp_path / 'gt')
    assert report['n_images'] == 1
    assert report['excluded'] == ['a.png', 'c.png']
    assert report['fid'] is None


def test_evaluate_disjoint_raises(tmp_path, rng):
    write_png(tmp_path / 'gen' / 'a.png', rng.integers(0, 256, (8, 8, 3)))
    write_png(tmp_path / 'gt' / 'b.png', rng.integers(0, 256, (8, 8, 3)))
    with pytest.raises(EmptyDatasetError):
        cqmetrics.evaluate_directories(tmp_path / 'gen', tmp_path / 'gt')


def test_evaluate_excludes_size_mismatch(tmp_path, rng):
    for name in ('a.png', 'b.png'):
        write_png(tmp_path / 'gen' / name, rng.integers(0, 256, (16, 16, 3)))
    write_png(tmp_path / 'gt' / 'a.png', rng.integers(0, 256, (16, 16, 3)))
    write_png(tmp_path / 'gt' / 'b.png', rng.integers(0, 256, (16, 24, 3)))
    report = cqmetrics.evaluate_directories(tmp_path / 'gen', tmp_path / 'gt')
    assert report['n_images'] == 1
    assert report['n_excluded'] == 1
    assert report['excluded'] == ['b.png']


def test_evaluate_single_pair_skips_frechet(tmp_path, rng):
    img = rng.integers(0, 256, (16, 16, 3))
    write_png(tmp_path / 'gen' / 'a.png', img)
    write_png(tmp_path / 'gt' / 'a.png', img)
    report = cqmetrics.evaluate_directories(tmp_path / 'gen', tmp_path / 'gt',
                                            embedder=cqmetrics.RandomEmbedder(dim=8))
    assert report['n_images'] == 1
    assert report['fid'] is None
    assert report['psnr'] == cqmetrics.PSNR_CAP
    assert report['delta_cf'] == 0.0


def test_frechet_is_symmetric(rng):
    sa = cqmetrics.RunningStats(5).update(rng.standard_normal((80, 5))).finalize()
    sb = cqmetrics.RunningStats(5).update(rng.standard_normal((60, 5)) * 2.0 - 1.0).finalize()
    assert cqmetrics.frechet_distance(sa, sb) == pytest.approx(cqmetrics.frechet_distance(sb, sa), rel=1e-6)


def test_delta_cf_symmetric_and_order_free(rng):
    gen = list(rng.uniform(0, 80, 12))
    gt = list(rng.uniform(0, 80, 9))
    base = cqmetrics.delta_cf(gen, gt)
    assert cqmetrics.delta_cf(gt, gen) == pytest.approx(base, abs=1e-12)
    assert cqmetrics.delta_cf(rng.permutation(gen), rng.permutation(gt)) == pytest.approx(base, abs=1e-12)


def test_psnr_decreases_as_error_grows(rng):
    target = rng.uniform(0, 255, (8, 8, 3))
    values = [cqmetrics.psnr(target + offset, target) for offset in (0.5, 1.0, 4.0, 16.0)]
    assert all(a > b for a, b in zip(values, values[1:]))
