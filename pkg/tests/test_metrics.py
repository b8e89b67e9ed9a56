import itertools
import math

import numpy as np
import pytest
import torch

from lidm import io
from lidm.codec import SensorConfig
from lidm.errors import ConfigError, DataError
from lidm.metrics import (
    FeatureStats,
    ToyPointVoxelExtractor,
    ToyRangeExtractor,
    ToyRangeNet,
    ToyVoxelExtractor,
    bev_centers,
    bev_histogram,
    chamfer,
    emd,
    fr_pipeline,
    frechet_distance,
    frechet_report,
    gaussian_stats,
    get_extractor,
    jsd,
    jsd_from_distributions,
    mmd,
    partition_aggregate,
    partition_aggregate_points,
    select_taps,
    set_stats,
    sinkhorn_emd,
    voxelize_sparse,
)
from lidm.synth import synthesize

SENSOR = SensorConfig.preset(64).resized(16, 128)


def brute_chamfer(x, y):
    d = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    return math.fsum(np.concatenate([d.min(1), d.min(0)]))


def brute_emd(x, y):
    best = math.inf
    for perm in itertools.permutations(range(len(y))):
        best = min(best, math.fsum(np.linalg.norm(x - y[list(perm)], axis=1)))
    return best


class TestBev:
    def test_cell_indexing(self):
        grid = bev_histogram(np.array([[0.01, 0.01, 0.0], [-0.01, 0.01, 5.0], [60.0, 0, 0]]))
        assert grid.size == 2000 and grid.dropped == 1
        assert grid.cells[1000, 1000] == 1 and grid.cells[999, 1000] == 1

    def test_centers(self):
        c = bev_centers(np.array([[0.1, 0.1, 3.0], [0.2, 0.3, 0.0]]))
        np.testing.assert_allclose(c, [[0.25, 0.25, 0.0]])


class TestJsd:
    def test_two_cell_closed_form(self):
        for p in (0.1, 0.3, 0.5, 0.9):
            q = 1 - p
            m = 0.5
            expect = 0.5 * (p * math.log2(p / m) + q * math.log2(q / m)) + \
                0.5 * (q * math.log2(q / m) + p * math.log2(p / m))
            assert abs(jsd_from_distributions([p, q], [q, p]) - expect) <= 1e-12

    def test_disjoint_is_one(self):
        a = [np.array([[1.0, 1.0, 0.0]])]
        b = [np.array([[-10.0, 3.0, 0.0]])]
        assert jsd(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_identical_is_zero(self, rng):
        s = [rng.normal(size=(100, 3)) * 10 for _ in range(3)]
        assert jsd(s, s) == 0.0

    def test_empty_errors(self):
        with pytest.raises(DataError):
            jsd([], [np.zeros((1, 3))])
        with pytest.raises(DataError):
            jsd([np.full((1, 3), 100.0)], [np.zeros((1, 3))])


class TestPairMetrics:
    @pytest.mark.parametrize("n", [1, 7, 64, 256])
    def test_chamfer_brute_force(self, n, rng):
        x, y = rng.normal(size=(n, 3)), rng.normal(size=(n + 3, 3))
        assert chamfer(x, y) == brute_chamfer(x, y)

    def test_chamfer_identical_zero_and_symmetric(self, rng):
        x, y = rng.normal(size=(30, 3)), rng.normal(size=(20, 3))
        assert chamfer(x, x) == 0.0
        assert chamfer(x, y) == chamfer(y, x)

    @pytest.mark.parametrize("n", [1, 2, 4, 6])
    def test_emd_permutations(self, n, rng):
        x, y = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        assert emd(x, y) == brute_emd(x, y)

    def test_emd_order_invariant(self, rng):
        x, y = rng.normal(size=(40, 3)), rng.normal(size=(40, 3))
        assert emd(x, y) == emd(x[rng.permutation(40)], y[rng.permutation(40)])

    def test_emd_errors(self, rng):
        with pytest.raises(DataError):
            emd(rng.normal(size=(3, 3)), rng.normal(size=(4, 3)))
        with pytest.raises(DataError):
            emd(rng.normal(size=(20, 3)), rng.normal(size=(20, 3)), cap=10)

    def test_sinkhorn_brackets_exact(self, rng):
        x, y = rng.normal(size=(60, 3)), rng.normal(size=(60, 3))
        exact = emd(x, y)
        primal, gap = sinkhorn_emd(x, y)
        assert primal >= exact - 1e-9
        assert primal - gap <= exact + 1e-9
        assert gap / exact < 0.05
        assert emd(x, y, approximate=True) == primal

    def test_mmd_identical_sets(self, rng):
        s = [rng.normal(size=(200, 3)) * 10 for _ in range(3)]
        assert mmd(s, s) == 0.0
        assert mmd(s, [c + [5.0, 0, 0] for c in s]) > 0


class TestFrechet:
    @staticmethod
    def one_d(mu, var):
        return FeatureStats(np.array([mu]), np.array([[var]]), 10)

    def test_one_d_closed_forms(self):
        assert abs(frechet_distance(self.one_d(0, 1), self.one_d(0, 4)) - 1.0) <= 1e-8
        assert abs(frechet_distance(self.one_d(0, 1), self.one_d(1, 1)) - 1.0) <= 1e-8
        assert abs(frechet_distance(self.one_d(2, 9), self.one_d(-1, 1)) - (9 + 4)) <= 1e-8

    def test_identical(self, rng):
        s = gaussian_stats(rng.normal(size=(50, 6)))
        assert frechet_distance(s, s) <= 1e-10

    def test_rotation_invariant(self, rng):
        a = gaussian_stats(rng.normal(size=(80, 5)) * [1, 2, 3, 4, 5])
        b = gaussian_stats(rng.normal(size=(80, 5)) + 1)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        rot = lambda s: FeatureStats(q @ s.mu, q @ s.sigma @ q.T, s.n)  # noqa: E731
        assert frechet_distance(rot(a), rot(b)) == pytest.approx(frechet_distance(a, b), rel=1e-9)

    def test_singular_covariance_reports_clamp(self):
        a = FeatureStats(np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]), 3)
        d2, clamp = frechet_report(a, a)
        assert d2 <= 1e-7 and clamp >= 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            frechet_distance(self.one_d(0, 1), FeatureStats(np.zeros(2), np.eye(2), 2))

    def test_stats_save_load(self, tmp_path, rng):
        s = gaussian_stats(rng.normal(size=(5, 3)))
        s.save(tmp_path / "s.lfs")
        t = FeatureStats.load(tmp_path / "s.lfs")
        assert t.n == 5 and np.array_equal(t.sigma, s.sigma)


class TestAggregation:
    def test_depth_and_angle_bands(self):
        act = np.arange(4 * 4, dtype=float).reshape(4, 4, 1)
        mask = np.ones((4, 4), dtype=bool)
        np.testing.assert_allclose(partition_aggregate(act, mask, 2, "depth"), [3.5, 11.5])
        np.testing.assert_allclose(partition_aggregate(act, mask, 2, "angle"), [6.5, 8.5])

    def test_invalid_pixels_excluded_and_empty_band_zero(self):
        act = np.ones((2, 2, 1))
        act[0, 0] = 100.0
        mask = np.array([[False, True], [False, False]])
        np.testing.assert_allclose(partition_aggregate(act, mask, 2, "depth"), [1.0, 0.0])

    def test_divisibility(self):
        with pytest.raises(ConfigError):
            partition_aggregate(np.zeros((6, 4, 1)), np.ones((6, 4)), 4, "depth")
        with pytest.raises(ConfigError):
            partition_aggregate(np.zeros((4, 4, 1)), np.ones((4, 4)), 2, "radial")

    def test_points_rings_and_sectors(self):
        xyz = np.array([[1.0, -0.1, 0], [9.0, -0.1, 0], [-1.0, 0.1, 0]])
        feats = np.array([[1.0], [3.0], [5.0]])
        np.testing.assert_allclose(partition_aggregate_points(feats, xyz, 10.0, 2, "depth"), [3.0, 3.0])
        np.testing.assert_allclose(partition_aggregate_points(feats, xyz, 10.0, 2, "angle"), [5.0, 2.0])


class TestVoxels:
    def test_examples(self):
        pts = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.05], [1.1, 0.0, 0.0]])
        vox = voxelize_sparse(pts, 0.25)
        assert len(vox) == 2
        np.testing.assert_array_equal(vox.counts, [2, 1])
        np.testing.assert_allclose(vox.centroids[0], [0.15, 0.15, 0.075])
        np.testing.assert_allclose(vox.centers[1], [1.125, 0.125, 0.125])
        np.testing.assert_array_equal(vox.inverse, [0, 0, 1])

    def test_bad_size(self):
        with pytest.raises(ConfigError):
            voxelize_sparse(np.zeros((1, 3)), 0.0)


class TestExtractors:
    def test_tap_modes(self):
        net = ToyRangeNet()
        enc, dec = net.taps(torch.zeros(1, 2, 8, 32))
        assert [len(select_taps(enc, dec, m)) for m in ("encoder", "decoder", "all", "final")] == [3, 3, 6, 1]
        with pytest.raises(ConfigError):
            select_taps(enc, dec, "middle")

    @pytest.mark.parametrize("name, cls", [("toy-range", ToyRangeExtractor), ("toy-voxel", ToyVoxelExtractor),
                                           ("toy-pointvoxel", ToyPointVoxelExtractor)])
    def test_vector_sizes(self, name, cls):
        ex = get_extractor(name)
        assert isinstance(ex, cls)
        img = synthesize(1, SENSOR, seed=0).images[0]
        assert ex.scene_vector(img, 4, "depth").shape == (4 * ex.channels,)

    def test_unknown_and_external(self):
        with pytest.raises(ConfigError):
            get_extractor("nope")
        ex = get_extractor("external", external="lidm.metrics.extractors:ToyVoxelExtractor")
        assert ex.channels == 8

    def test_range_extractor_is_deterministic(self):
        img = synthesize(1, SENSOR, seed=1).images[0]
        a = ToyRangeExtractor().scene_vector(img, 4, "depth")
        b = ToyRangeExtractor().scene_vector(img, 4, "depth")
        assert np.array_equal(a, b)


def _write_set(directory, images):
    directory.mkdir()
    paths = []
    for i, img in enumerate(images):
        paths.append(directory / f"s{i}.lri")
        io.write_lri(paths[-1], img)
    return paths


class TestPipeline:
    def test_identical_sets_zero(self, tmp_path):
        files = _write_set(tmp_path / "a", synthesize(4, SENSOR, seed=0).images)
        assert fr_pipeline(files, files, ToyRangeExtractor(), partitions=4) <= 1e-10

    def test_needs_two_scenes(self, tmp_path):
        files = _write_set(tmp_path / "a", synthesize(1, SENSOR, seed=0).images)
        with pytest.raises(DataError):
            fr_pipeline(files, files, ToyVoxelExtractor(), partitions=4)

    def test_cache_is_reused(self, tmp_path):
        files = _write_set(tmp_path / "a", synthesize(3, SENSOR, seed=0).images)
        cache = tmp_path / "ref.lfs"
        first = set_stats(files, ToyVoxelExtractor(), 4, cache=cache)
        again = set_stats([], ToyVoxelExtractor(), 4, cache=cache)
        assert np.array_equal(first.stats.mu, again.stats.mu)

    def test_bad_file_is_skipped(self, tmp_path):
        files = _write_set(tmp_path / "a", synthesize(3, SENSOR, seed=0).images)
        (tmp_path / "a" / "broken.lri").write_bytes(b"LRI1")
        result = set_stats(files + [tmp_path / "a" / "broken.lri"], ToyVoxelExtractor(), 4)
        assert result.usable == 3 and len(result.errors) == 1
