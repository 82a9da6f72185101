import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treebench.errors import InputError
from treebench.geom import PointCloud
from treebench.metrics import (LN2, chamfer_l2, error_stats, geom_metrics,
                               jsd, throughput_ratio)

from conftest import random_rotation


def brute_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """O(n^2) oracle with the same arithmetic as the production path."""
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    d_ab = np.sqrt(np.sum((a - b[np.argmin(d2, axis=1)]) ** 2, axis=1))
    d_ba = np.sqrt(np.sum((b - a[np.argmin(d2, axis=0)]) ** 2, axis=1))
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def histogram_jsd(a: np.ndarray, b: np.ndarray, voxel: float) -> float:
    """Independent dense-histogram computation of the divergence."""
    lo = np.minimum(a.min(axis=0), b.min(axis=0))
    hi = np.maximum(a.max(axis=0), b.max(axis=0))
    edges = [np.arange(lo[k], hi[k] + 2 * voxel, voxel) for k in range(3)]
    ha, _ = np.histogramdd(a, bins=edges)
    hb, _ = np.histogramdd(b, bins=edges)
    p = (ha / ha.sum()).ravel()
    q = (hb / hb.sum()).ravel()
    m = (p + q) / 2
    kl_pm = np.sum(p[p > 0] * np.log(p[p > 0] / m[p > 0]))
    kl_qm = np.sum(q[q > 0] * np.log(q[q > 0] / m[q > 0]))
    return float(0.5 * kl_pm + 0.5 * kl_qm)


class TestChamfer:
    def test_identical_clouds_zero(self, tree_cloud):
        assert chamfer_l2(tree_cloud, tree_cloud) == 0.0

    def test_singletons(self):
        a = PointCloud([[0.0, 0.0, 0.0]])
        b = PointCloud([[0.1, 0.0, 0.0]])
        assert chamfer_l2(a, b) == pytest.approx(0.1, abs=1e-15)

    def test_matches_brute_force_exactly(self):
        gen = np.random.default_rng(0)
        for _ in range(10):
            a = gen.uniform(-1, 1, (200, 3))
            b = gen.uniform(-1, 1, (200, 3))
            assert chamfer_l2(PointCloud(a), PointCloud(b)) == brute_chamfer(a, b)

    def test_symmetric(self):
        gen = np.random.default_rng(1)
        a = PointCloud(gen.random((150, 3)))
        b = PointCloud(gen.random((170, 3)))
        assert chamfer_l2(a, b) == chamfer_l2(b, a)

    def test_rigid_invariance(self, tree_cloud):
        gen = np.random.default_rng(2)
        small = PointCloud(tree_cloud.points[:2000])
        other = PointCloud(tree_cloud.points[2000:4000])
        base = chamfer_l2(small, other)
        R = random_rotation(gen)
        t = gen.uniform(-1, 1, 3)
        moved_a = PointCloud(small.points @ R.T + t)
        moved_b = PointCloud(other.points @ R.T + t)
        assert abs(chamfer_l2(moved_a, moved_b) - base) < 1e-12

    def test_squared_variant(self):
        a = PointCloud([[0.0, 0.0, 0.0]])
        b = PointCloud([[0.2, 0.0, 0.0]])
        assert chamfer_l2(a, b, squared=True) == pytest.approx(0.04, abs=1e-15)

    def test_empty_rejected(self, tree_cloud):
        with pytest.raises(InputError):
            chamfer_l2(PointCloud(np.empty((0, 3))), tree_cloud)


class TestJsd:
    def test_identical_zero(self, tree_cloud):
        assert jsd(tree_cloud, tree_cloud, 0.05) == 0.0

    def test_disjoint_supports_ln2(self):
        gen = np.random.default_rng(3)
        a = PointCloud(gen.random((500, 3)))
        b = PointCloud(gen.random((500, 3)) + 100.0)
        assert abs(jsd(a, b, 0.05) - LN2) < 1e-12

    def test_matches_histogram_oracle(self):
        gen = np.random.default_rng(4)
        for _ in range(20):
            a = gen.normal(0, 0.3, (500, 3))
            b = gen.normal(0.1, 0.35, (500, 3))
            ours = jsd(PointCloud(a), PointCloud(b), 0.1)
            assert abs(ours - histogram_jsd(a, b, 0.1)) < 1e-12

    def test_bounds_and_symmetry(self):
        gen = np.random.default_rng(5)
        a = PointCloud(gen.random((300, 3)))
        b = PointCloud(gen.random((300, 3)) * 0.5)
        v = jsd(a, b, 0.07)
        assert 0.0 <= v <= LN2 + 1e-12
        assert jsd(b, a, 0.07) == pytest.approx(v, abs=1e-15)

    def test_rejects_bad_voxel(self, tree_cloud):
        with pytest.raises(InputError):
            jsd(tree_cloud, tree_cloud, 0.0)

    def test_geom_metrics_bundle(self, tree_cloud):
        sub = PointCloud(tree_cloud.points[::2])
        m = geom_metrics(sub, tree_cloud, 0.05)
        assert m.n_source == len(sub) and m.n_target == len(tree_cloud)
        assert m.chamfer_l2 >= 0 and 0 <= m.jsd <= LN2


class TestErrorStats:
    def test_perfect_estimates(self):
        s = error_stats([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert s.mae_mean == 0 and s.mape_mean == 0 and s.mae_p75 == 0

    def test_hand_arithmetic(self):
        s = error_stats([1.0, 3.0], [2.0, 2.0])
        assert s.mae_mean == 1.0
        assert s.mape_mean == 50.0

    def test_matches_naive_recomputation(self):
        gen = np.random.default_rng(6)
        est = gen.uniform(1, 10, 30)
        gt = gen.uniform(1, 10, 30)
        s = error_stats(est, gt)
        ae = np.abs(est - gt)
        ape = ae / np.abs(gt) * 100
        assert s.mae_mean == np.mean(ae)
        assert s.mae_std == np.std(ae)
        assert s.mae_p75 == np.percentile(ae, 75)
        assert s.mape_mean == np.mean(ape)
        assert s.mape_std == np.std(ape)
        assert s.mape_p75 == np.percentile(ape, 75)

    def test_zero_ground_truth_excluded(self, caplog):
        s = error_stats([1.0, 2.0], [0.0, 4.0])
        assert s.n_mape_excluded == 1
        assert s.mape_mean == 50.0
        assert s.mae_mean == 1.5  # MAE still counts every item

    def test_all_zero_ground_truth_rejected(self):
        with pytest.raises(InputError):
            error_stats([1.0], [0.0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(InputError):
            error_stats([1.0, 2.0], [1.0])

    @given(st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=40),
           st.integers(min_value=0, max_value=10 ** 6))
    @settings(max_examples=40, deadline=None)
    def test_stats_are_nonnegative(self, values, seed):
        gen = np.random.default_rng(seed)
        gt = gen.uniform(0.5, 10.0, len(values))
        s = error_stats(np.asarray(values), gt)
        for v in (s.mae_mean, s.mae_std, s.mae_p75, s.mape_mean, s.mape_std, s.mape_p75):
            assert v >= 0


class TestThroughput:
    def test_paper_style_ratio_exact(self):
        # 3 hours for 6 items vs 30 seconds for 6 items -> exactly 360x
        assert throughput_ratio(3 * 3600.0, 30.0, 6, 6) == 360.0

    def test_plain_ratio(self):
        assert throughput_ratio(100.0, 10.0) == 10.0

    def test_rejects_nonpositive(self):
        with pytest.raises(InputError):
            throughput_ratio(0.0, 10.0)
