"""Descriptor-layer tests with direct-summation oracles."""

import numpy as np
import pytest

from spdbow.descriptors import (
    BlockSpec,
    TrajectoryFeature,
    build_integral,
    covariance,
    default_block_spec,
    extract_blocks,
    generate_synthetic,
)
from spdbow.errors import ConfigError, DimensionMismatchError


def make_features(xs, ys, ts, fm):
    return [
        TrajectoryFeature(x=xs[i], y=ys[i], t=ts[i], feature=fm[i])
        for i in range(len(xs))
    ]


def random_features(rng, n, d, extent):
    w, h, t = extent
    return make_features(
        rng.uniform(0, w, n),
        rng.uniform(0, h, n),
        rng.integers(0, int(t), n),
        rng.standard_normal((n, d)),
    )


def direct_box_sums(features, box, cell_size):
    """Brute-force oracle: mask features into the cell-aligned box and sum."""
    (ix0, ix1), (iy0, iy1), (it0, it1) = box
    sx, sy, st = cell_size
    sel = [
        f
        for f in features
        if ix0 * sx <= f.x < ix1 * sx
        and iy0 * sy <= f.y < iy1 * sy
        and it0 * st <= f.t < it1 * st
    ]
    if not sel:
        d = features[0].feature.shape[0]
        return 0, np.zeros(d), np.zeros((d, d))
    fm = np.stack([f.feature for f in sel])
    return len(sel), fm.sum(axis=0), fm.T @ fm


class TestCovariance:
    def test_hand_two_points(self):
        got = covariance([[0.0, 0.0], [2.0, 2.0]]).array
        assert np.allclose(got, [[2.0, 2.0], [2.0, 2.0]])

    def test_constant_is_zero(self):
        got = covariance([[3.0, -1.0]] * 5).array
        assert np.allclose(got, 0.0)

    def test_hand_four_points(self):
        obs = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
        assert np.allclose(covariance(obs).array, np.diag([2 / 3, 2 / 3]))

    def test_requires_two_observations(self):
        with pytest.raises(ValueError):
            covariance([[1.0, 2.0]])

    def test_diagonal_is_variance(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((100, 4)) * np.array([1.0, 2.0, 3.0, 4.0])
        got = np.diag(covariance(x).array)
        assert np.allclose(got, x.var(axis=0, ddof=1))


class TestBuildIntegral:
    def test_empty_features(self):
        stats = build_integral([], (1.0, 1.0, 1.0), (4.0, 4.0, 4.0), d=3)
        n, s1, s2 = stats.box_query(0, 4, 0, 4, 0, 4)
        assert n == 0
        assert np.allclose(s1, 0.0) and np.allclose(s2, 0.0)

    def test_empty_requires_d(self):
        with pytest.raises(ValueError):
            build_integral([], (1.0, 1.0, 1.0), (4.0, 4.0, 4.0))

    def test_single_feature(self):
        o = np.array([1.0, -2.0, 0.5])
        feats = make_features([1.5], [0.5], [2], [o])
        stats = build_integral(feats, (1.0, 1.0, 1.0), (4.0, 4.0, 4.0))
        n, s1, s2 = stats.box_query(1, 2, 0, 1, 2, 3)
        assert n == 1
        assert np.allclose(s1, o)
        assert np.allclose(s2, np.outer(o, o))

    def test_zero_resolution_rejected(self):
        with pytest.raises(ConfigError):
            build_integral([], (0.0, 1.0, 1.0), (4.0, 4.0, 4.0), d=2)

    def test_random_boxes_match_direct_sums(self):
        rng = np.random.default_rng(42)
        extent = (10.0, 8.0, 12.0)
        cell = (2.0, 2.0, 3.0)
        feats = random_features(rng, 1000, 4, extent)
        stats = build_integral(feats, cell, extent)
        nx, ny, nt = stats.cells
        for _ in range(20):
            ix = sorted(rng.integers(0, nx + 1, 2))
            iy = sorted(rng.integers(0, ny + 1, 2))
            it = sorted(rng.integers(0, nt + 1, 2))
            n, s1, s2 = stats.box_query(ix[0], ix[1], iy[0], iy[1], it[0], it[1])
            n_ref, s1_ref, s2_ref = direct_box_sums(feats, (ix, iy, it), cell)
            assert n == n_ref
            assert np.allclose(s1, s1_ref, rtol=1e-6, atol=1e-9)
            assert np.allclose(s2, s2_ref, rtol=1e-6, atol=1e-9)

    def test_s2_prefix_volumes_symmetric(self):
        rng = np.random.default_rng(1)
        feats = random_features(rng, 200, 3, (4.0, 4.0, 4.0))
        stats = build_integral(feats, (1.0, 1.0, 1.0), (4.0, 4.0, 4.0))
        assert np.allclose(stats.s2, np.swapaxes(stats.s2, -1, -2))

    def test_coordinates_outside_extent_rejected(self):
        feats = make_features([5.0], [1.0], [1], [np.zeros(2) + 1.0])
        with pytest.raises(ValueError):
            build_integral(feats, (1.0, 1.0, 1.0), (4.0, 4.0, 4.0))


class TestExtractBlocks:
    def spec_for(self, extent, d, min_samples=None):
        s = default_block_spec(*extent, d)
        if min_samples is not None:
            s = BlockSpec(
                s.block_w, s.block_h, s.block_t,
                s.stride_x, s.stride_y, s.stride_t, min_samples,
            )
        return s

    def test_default_lattice_has_27_placements(self):
        rng = np.random.default_rng(2)
        extent = (16.0, 16.0, 16.0)
        feats = random_features(rng, 300, 3, extent)
        res = extract_blocks(feats, self.spec_for(extent, 3), extent)
        assert res.placements == 27
        assert res.emitted + res.rejected == 27

    def test_locality_single_occupied_cell(self):
        # All features inside the first stride cell: only the one placement
        # anchored at the origin covers them.
        rng = np.random.default_rng(3)
        extent = (16.0, 16.0, 16.0)
        d = 3
        n = 20
        feats = make_features(
            rng.uniform(0, 3.9, n), rng.uniform(0, 3.9, n),
            rng.integers(0, 4, n), rng.standard_normal((n, d)),
        )
        res = extract_blocks(feats, self.spec_for(extent, d), extent)
        assert res.emitted == 1
        assert res.descriptors[0].count == n
        assert res.rejected_low_count == 26

    def test_all_rejected_when_below_threshold(self):
        rng = np.random.default_rng(4)
        extent = (16.0, 16.0, 16.0)
        d = 3
        feats = make_features(
            rng.uniform(0, 3.9, 5), rng.uniform(0, 3.9, 5),
            rng.integers(0, 4, 5), rng.standard_normal((5, d)),
        )
        res = extract_blocks(feats, self.spec_for(extent, d, min_samples=6), extent)
        assert res.emitted == 0
        assert res.rejected == res.placements == 27

    def test_covariance_matches_direct_oracle(self):
        rng = np.random.default_rng(5)
        extent = (16.0, 12.0, 8.0)
        d = 4
        feats = random_features(rng, 2000, d, extent)
        spec = self.spec_for(extent, d)
        reg = 1e-6
        res = extract_blocks(feats, spec, extent, regularizer=reg)
        assert res.emitted > 0
        for desc in res.descriptors:
            x0 = desc.cx * extent[0] - spec.block_w / 2
            y0 = desc.cy * extent[1] - spec.block_h / 2
            t0 = desc.ct * extent[2] - spec.block_t / 2
            members = [
                f.feature
                for f in feats
                if x0 - 1e-9 <= f.x < x0 + spec.block_w
                and y0 - 1e-9 <= f.y < y0 + spec.block_h
                and t0 - 1e-9 <= f.t < t0 + spec.block_t
            ]
            assert len(members) == desc.count
            direct = covariance(np.stack(members)).array
            direct = direct + reg * np.trace(direct) / d * np.eye(d)
            err = np.linalg.norm(desc.cov.array - direct) / np.linalg.norm(direct)
            assert err < 1e-6

    def test_counts_respect_threshold(self):
        rng = np.random.default_rng(6)
        extent = (16.0, 16.0, 16.0)
        d = 3
        feats = random_features(rng, 150, d, extent)
        spec = self.spec_for(extent, d)
        res = extract_blocks(feats, spec, extent)
        assert all(desc.count >= spec.min_samples for desc in res.descriptors)

    def test_translation_covariance_interior(self):
        rng = np.random.default_rng(7)
        extent = (16.0, 16.0, 16.0)
        d = 3
        n = 60
        xs = rng.uniform(4.0, 7.9, n)
        ys = rng.uniform(4.0, 7.9, n)
        ts = rng.integers(4, 8, n)
        fm = rng.standard_normal((n, d))
        spec = self.spec_for(extent, d, min_samples=4)
        base = extract_blocks(make_features(xs, ys, ts, fm), spec, extent)
        shifted = extract_blocks(
            make_features(xs + spec.stride_x, ys, ts, fm), spec, extent
        )
        assert base.emitted == shifted.emitted > 0

        def multiset(res):
            return sorted(
                np.round(desc.cov.array, 9).tobytes() for desc in res.descriptors
            )

        assert multiset(base) == multiset(shifted)

    def test_low_min_samples_needs_regularizer(self):
        rng = np.random.default_rng(8)
        extent = (16.0, 16.0, 16.0)
        d = 3
        feats = random_features(rng, 100, d, extent)
        spec = self.spec_for(extent, d, min_samples=3)
        with pytest.raises(ConfigError):
            extract_blocks(feats, spec, extent, regularizer=0.0)
        extract_blocks(feats, spec, extent, regularizer=1e-6)

    def test_constant_features_rejected_not_spd(self):
        # Zero covariance cannot be rescued by a trace-scaled ridge.
        extent = (16.0, 16.0, 16.0)
        d = 3
        n = 40
        rng = np.random.default_rng(9)
        feats = make_features(
            rng.uniform(0, 16, n), rng.uniform(0, 16, n),
            rng.integers(0, 16, n), np.ones((n, d)),
        )
        res = extract_blocks(feats, self.spec_for(extent, d, min_samples=4), extent)
        assert res.emitted == 0
        assert res.rejected_not_spd > 0
        assert res.emitted + res.rejected == res.placements


class TestBlockSpec:
    def test_rejects_stride_above_extent(self):
        with pytest.raises(ConfigError):
            BlockSpec(4, 4, 4, 5, 2, 2, min_samples=4)

    def test_rejects_non_multiple_extent(self):
        with pytest.raises(ConfigError):
            BlockSpec(5, 4, 4, 2, 2, 2, min_samples=4)

    def test_rejects_tiny_min_samples(self):
        with pytest.raises(ConfigError):
            BlockSpec(4, 4, 4, 2, 2, 2, min_samples=1)


class TestGenerateSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(0, 50, 4, seed=123)
        b = generate_synthetic(0, 50, 4, seed=123)
        assert len(a) == len(b) == 50
        for fa, fb in zip(a, b):
            assert (fa.x, fa.y, fa.t) == (fb.x, fb.y, fb.t)
            assert np.array_equal(fa.feature, fb.feature)

    def test_seed_changes_output(self):
        a = generate_synthetic(0, 50, 4, seed=1)
        b = generate_synthetic(0, 50, 4, seed=2)
        assert any(fa.x != fb.x for fa, fb in zip(a, b))

    def test_class_covariances_separated(self):
        # Sample-covariance oracle: with many draws the empirical covariances
        # approach the class models, which must stay apart in Frobenius norm.
        n, d = 20000, 6
        c0 = covariance(np.stack([f.feature for f in generate_synthetic(0, n, d, 11)])).array
        c1 = covariance(np.stack([f.feature for f in generate_synthetic(1, n, d, 11)])).array
        assert np.linalg.norm(c0 - c1) > 0.5

    def test_zero_trajectories(self):
        assert generate_synthetic(1, 0, 4, seed=0) == []

    def test_small_d_rejected(self):
        with pytest.raises(ConfigError):
            generate_synthetic(0, 10, 1, seed=0)

    def test_coordinates_in_bounds(self):
        feats = generate_synthetic(2, 500, 4, seed=5, width=160, height=120, duration=64)
        for f in feats:
            assert 0 <= f.x < 160 and 0 <= f.y < 120 and 0 <= f.t < 64

    def test_feature_dimension(self):
        with pytest.raises(DimensionMismatchError):
            TrajectoryFeature(x=0, y=0, t=0, feature=np.zeros(1))
