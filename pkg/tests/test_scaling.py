import numpy as np
import pytest

from treebench.errors import InputError
from treebench.qsm import QsmParams, count_branches, extract_skeleton, tree_height
from treebench.scaling import ScaleResult, apply_scale, base_centroid, scale_factor
from treebench.treegen import TreeParams, TriMesh, generate_tree, sample_surface


class TestScaleFactor:
    def test_plain_ratio(self):
        r = scale_factor(3.0, 1.5)
        assert r.s == 2.0 and r.h_ref == 3.0 and r.h_rec == 1.5

    def test_identity(self):
        assert scale_factor(2.5, 2.5).s == 1.0

    def test_rejects_nonpositive(self):
        for h_ref, h_rec in ((0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)):
            with pytest.raises(InputError):
                scale_factor(h_ref, h_rec)

    def test_result_invariant_enforced(self):
        with pytest.raises(InputError):
            ScaleResult(s=2.0, h_ref=3.0, h_rec=2.0)


class TestApplyScale:
    def test_identity_scale(self, tree_cloud):
        out = apply_scale(tree_cloud, 1.0)
        assert np.abs(out.points - tree_cloud.points).max() < 1e-15

    def test_doubling_doubles_height(self, tree_cloud):
        h0 = tree_height(tree_cloud)
        h1 = tree_height(apply_scale(tree_cloud, 2.0))
        assert h1 == pytest.approx(2.0 * h0, rel=1e-12)

    def test_inverse_round_trip(self, tree_cloud):
        s = 1.7
        back = apply_scale(apply_scale(tree_cloud, s), 1.0 / s)
        assert np.abs(back.points - tree_cloud.points).max() < 1e-12

    def test_base_stays_fixed(self, tree_cloud):
        anchor = base_centroid(tree_cloud.points)
        out = apply_scale(tree_cloud, 3.0)
        assert abs(out.points[:, 2].min() - tree_cloud.points[:, 2].min()) < 1e-12
        np.testing.assert_allclose(base_centroid(out.points)[:2], anchor[:2], atol=1e-6)

    def test_mesh_scaling(self, tree_model):
        out = apply_scale(tree_model.mesh, 0.5)
        assert isinstance(out, TriMesh)
        span0 = np.ptp(tree_model.mesh.vertices[:, 2])
        assert np.ptp(out.vertices[:, 2]) == pytest.approx(0.5 * span0, rel=1e-12)

    def test_rejects_nonpositive_scale(self, tree_cloud):
        with pytest.raises(InputError):
            apply_scale(tree_cloud, 0.0)


class TestClosure:
    def test_height_closure(self, tree_cloud):
        # Eq-style closure: rescaling to a target height reproduces it exactly
        for h_ref in (1.0, 2.5, 7.3):
            s = scale_factor(h_ref, tree_height(tree_cloud)).s
            h_new = tree_height(apply_scale(tree_cloud, s))
            assert abs(h_new - h_ref) / h_ref < 1e-9

    def test_branch_topology_invariant(self):
        model = generate_tree(TreeParams(seed=51, branch_count=12))
        cloud = sample_surface(model.mesh, 30_000, seed=15)
        params = QsmParams()
        c0 = count_branches(extract_skeleton(cloud, params), params)
        scaled = apply_scale(cloud, 0.5)
        sp = params.scaled(0.5)
        c1 = count_branches(extract_skeleton(scaled, sp), sp)
        assert c1 == c0
