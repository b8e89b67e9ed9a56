import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lidm import kernels
from lidm.codec import INVALID_DEPTH, RangeImage, SensorConfig, pixel_centers, project, ray_directions, unproject
from lidm.curves import curve_stats, extract_curves
from lidm.errors import ConfigError
from lidm.synth import Box, Cylinder, SceneParams, SceneSpec, Wall, _pack, make_random_scene, raycast, \
    raycast_labels, synthesize

BACKENDS = kernels.backends()
S64 = SensorConfig.preset(64)
SMALL = SensorConfig.preset(64).resized(16, 256)


def _image_from_mask(mask):
    h, w = mask.shape
    cfg = SensorConfig(h, w, 3.0, -25.0, 5.84)
    return RangeImage(np.where(mask, 10.0, INVALID_DEPTH).astype(np.float32), cfg)


class TestBackends:
    def test_reference_always_available(self):
        assert "python" in BACKENDS
        assert kernels.BACKEND in BACKENDS

    @pytest.mark.parametrize("name", sorted(BACKENDS))
    def test_scatter_min(self, name, rng):
        flat = rng.integers(0, 50, size=500)
        vals = rng.random(500)
        expect = np.full(50, np.inf)
        for i, v in zip(flat, vals):
            expect[i] = min(expect[i], v)
        np.testing.assert_array_equal(BACKENDS[name].scatter_min(flat, vals, 50), expect)

    @pytest.mark.parametrize("name", sorted(BACKENDS))
    def test_raycast_matches_reference(self, name):
        rows, cols = np.indices(SMALL.shape)
        dirs = ray_directions(*pixel_centers(rows.ravel(), cols.ravel(), SMALL), SMALL)
        for seed in range(5):
            packed = _pack(make_random_scene(seed))
            t_ref, lab_ref = BACKENDS["python"].raycast(dirs, *packed, SMALL.max_range)
            t, lab = BACKENDS[name].raycast(dirs, *packed, SMALL.max_range)
            np.testing.assert_array_equal(t, t_ref)
            np.testing.assert_array_equal(lab, lab_ref)

    @pytest.mark.parametrize("name", sorted(BACKENDS))
    def test_nearest_sqdist_matches_brute_force(self, name, rng):
        q = rng.normal(size=(300, 3))
        p = rng.normal(size=(200, 3))
        diff = q[:, None, :] - p[None, :, :]
        brute = (diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]).min(1)
        np.testing.assert_array_equal(BACKENDS[name].nearest_sqdist(q, p), brute)

    @settings(max_examples=150, deadline=None)
    @given(arrays(np.bool_, st.tuples(st.integers(1, 4), st.integers(1, 12))))
    def test_row_runs_agree(self, mask):
        results = [tuple(map(np.ndarray.tolist, mod.row_runs(mask))) for mod in BACKENDS.values()]
        assert all(r == results[0] for r in results)


class TestCurves:
    @pytest.mark.parametrize("row, expect", [
        ([1, 1, 0, 1], [[3, 0, 1]]),
        ([1, 1, 1, 1], [[0, 1, 2, 3]]),
        ([1, 0, 1, 0], [[0], [2]]),
        ([0, 0, 0, 0], []),
    ])
    def test_row_examples(self, row, expect):
        cc = extract_curves(_image_from_mask(np.array([row], dtype=bool)))
        assert [c.cols.tolist() for c in cc.curves] == expect

    def test_full_image_stats(self):
        cc = extract_curves(_image_from_mask(np.ones((3, 8), dtype=bool)))
        stats = curve_stats(cc)
        assert (stats.count, stats.mean_length) == (3, 8.0)
        assert "curve_count=3" in stats.report()

    def test_empty(self):
        assert curve_stats(extract_curves(_image_from_mask(np.zeros((3, 8), dtype=bool)))).count == 0

    @settings(max_examples=150, deadline=None)
    @given(arrays(np.bool_, st.tuples(st.integers(1, 4), st.integers(2, 16))), st.integers(0, 40))
    def test_partition_and_roll_equivariance(self, mask, k):
        img = _image_from_mask(mask)
        cc = extract_curves(img)
        covered = np.zeros_like(mask, dtype=int)
        for c in cc.curves:
            covered[c.row, c.cols] += 1
            assert np.all(np.diff(c.cols) % mask.shape[1] == 1)
        np.testing.assert_array_equal(covered, mask.astype(int))
        w = mask.shape[1]
        rolled = extract_curves(img.roll(k))
        members = lambda cloud, shift: sorted((c.row, tuple(sorted((c.cols + shift) % w))) for c in cloud.curves)  # noqa: E731
        assert members(cc, k) == members(rolled, 0)

    def test_points_follow_pixels(self):
        img = synthesize(1, SMALL, seed=3).images[0]
        cc = extract_curves(img)
        pts = np.concatenate([c.points for c in cc.curves])
        assert len(pts) == img.mask.sum()
        assert curve_stats(cc).total_length == img.mask.sum()


class TestSynth:
    def test_ground_only_rows(self):
        cfg = SMALL
        img = raycast(SceneSpec(), cfg)
        rows = np.arange(cfg.height)
        b = (rows + 0.5) / cfg.height
        pitch = (1 - b) * cfg.fov_rad + cfg.fov_down_rad
        for r, p in zip(rows, pitch):
            if p >= 0:
                assert not img.mask[r].any()
            else:
                d = 1.73 / math.sin(-p)
                if d <= cfg.max_range:
                    np.testing.assert_allclose(img.depth[r], d, rtol=1e-6)
                else:
                    assert not img.mask[r].any()

    def test_no_ground_empty_scene(self):
        assert not raycast(SceneSpec(ground_height=None), SMALL).mask.any()

    def test_box_gives_contiguous_run(self):
        scene = SceneSpec(ground_height=None, boxes=(Box((10.0, 0.0, -0.5), (2.0, 2.0, 3.0)),))
        img = raycast(scene, SMALL)
        for r in np.nonzero(img.mask.any(1))[0]:
            assert len([c for c in extract_curves(img).curves if c.row == r]) == 1

    def test_labels(self):
        scene = SceneSpec(boxes=(Box((8.0, 0.0, -0.5), (2.0, 2.0, 2.5)),),
                          cylinders=(Cylinder((0.0, 8.0, 0.0), 0.5, 4.0),),
                          walls=(Wall((-8.0, -5.0), (-8.0, 5.0), -1.73, 3.0),))
        img, labels = raycast_labels(scene, SMALL)
        assert set(np.unique(labels)) == {0, 1, 2, 3, 4}
        assert np.array_equal(labels > 0, img.mask)

    def test_deterministic(self):
        assert make_random_scene(7) == make_random_scene(7)
        a = synthesize(2, SMALL, seed=5)
        b = synthesize(2, SMALL, seed=5)
        assert all(x == y for x, y in zip(a.images, b.images))

    def test_zero_primitives(self):
        scene = make_random_scene(1, SceneParams(boxes=(0, 0), cylinders=(0, 0), walls=(0, 0)))
        assert scene.primitive_count == 0 and scene.ground_height == pytest.approx(1.73)

    def test_bad_params(self):
        with pytest.raises(ConfigError):
            SceneParams(boxes=(3, 1))

    def test_seed_sweep(self):
        cfg = SensorConfig.preset(32).resized(8, 64)
        for seed in range(1000):
            img = raycast(make_random_scene(seed), cfg)
            assert img.mask.any()
            d = img.depth[img.mask > 0]
            assert np.all((d > 0) & (d <= cfg.max_range_f32))

    def test_lossless_round_trip(self):
        for img in synthesize(5, S64, seed=11).images:
            assert project(unproject(img), S64) == img
