import numpy as np
import pytest

from treebench import io
from treebench.errors import InputError
from treebench.skeleton import SkeletonGraph
from treebench.treegen import (TreeParams, TriMesh, generate_tree,
                               ground_truth_traits, random_params,
                               sample_surface, tube_triangle_count)


class TestParams:
    def test_rejects_bad_zone(self):
        with pytest.raises(InputError):
            TreeParams(seed=0, branch_zone=(0.8, 0.4))

    def test_rejects_bad_taper(self):
        with pytest.raises(InputError):
            TreeParams(seed=0, trunk_taper=0.0)

    def test_rejects_stub_branches(self):
        with pytest.raises(InputError):
            TreeParams(seed=0, branch_length_range=(0.01, 0.2))

    def test_json_round_trip(self):
        p = TreeParams(seed=9, branch_count=7)
        assert TreeParams.from_dict(p.to_dict()) == p


class TestGenerateTree:
    def test_bare_trunk(self):
        model = generate_tree(TreeParams(seed=1, branch_count=0))
        sk = model.skeleton
        assert sk.branch_roots.size == 0
        assert model.traits.branch_count == 0
        # skeleton is exactly the trunk path
        assert sk.n_nodes == len(sk.trunk_path)
        assert sk.edges.shape[0] == sk.n_nodes - 1

    def test_deterministic_ply_bytes(self, tmp_path):
        # same seed twice -> bit-identical sampled-cloud files
        paths = []
        for run in range(2):
            model = generate_tree(TreeParams(seed=42))
            cloud = sample_surface(model.mesh, 5_000, seed=42)
            p = tmp_path / f"run{run}.ply"
            io.save_ply(p, cloud)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_branch_count_and_triangle_formula(self):
        model = generate_tree(TreeParams(seed=3, branch_count=24))
        sk = model.skeleton
        assert sk.branch_roots.size == 24
        # sweep arithmetic: trunk chain + per-branch chains (root node shared)
        n_trunk = len(sk.trunk_path)
        n_new_branch_nodes = sk.n_nodes - n_trunk
        expected = tube_triangle_count(n_trunk) + 24 * n_new_branch_nodes + 24 * 24
        assert model.mesh.n_triangles == expected

    def test_branch_roots_lie_on_trunk_path(self):
        model = generate_tree(TreeParams(seed=5, branch_count=10))
        assert set(model.skeleton.branch_roots.tolist()) <= set(model.skeleton.trunk_path.tolist())

    def test_tree_graph_invariant(self):
        model = generate_tree(TreeParams(seed=8, branch_count=17))
        sk = model.skeleton
        assert sk.edges.shape[0] == sk.n_nodes - 1
        assert sk.is_connected()

    def test_no_degenerate_triangles(self, tree_model):
        assert tree_model.mesh.triangle_areas().min() > 0

    def test_mesh_vertices_near_skeleton(self, tree_model):
        # every vertex within (local radius + curvature noise + 1e-6) of an edge
        sk = tree_model.skeleton
        segs_a = sk.positions[sk.edges[:, 0]]
        segs_b = sk.positions[sk.edges[:, 1]]
        rad = np.maximum(sk.radii[sk.edges[:, 0]], sk.radii[sk.edges[:, 1]])
        verts = tree_model.mesh.vertices
        ab = segs_b - segs_a
        denom = np.maximum(np.sum(ab * ab, axis=1), 1e-18)
        for v in verts[:: max(1, len(verts) // 600)]:
            t = np.clip(np.sum((v - segs_a) * ab, axis=1) / denom, 0.0, 1.0)
            closest = segs_a + t[:, None] * ab
            d = np.linalg.norm(closest - v, axis=1)
            k = int(np.argmin(d))
            bound = rad[k] + tree_model.params.curvature_noise + 1e-6
            assert d[k] <= bound

    def test_determinism_full_structures(self):
        a = generate_tree(TreeParams(seed=77))
        b = generate_tree(TreeParams(seed=77))
        assert np.array_equal(a.skeleton.positions, b.skeleton.positions)
        assert np.array_equal(a.skeleton.radii, b.skeleton.radii)
        assert np.array_equal(a.mesh.vertices, b.mesh.vertices)
        assert a.traits.trunk_diameter == b.traits.trunk_diameter

    def test_base_diameter_monotonicity(self):
        diams = []
        for base in (0.04, 0.05, 0.06, 0.08):
            model = generate_tree(TreeParams(seed=4, trunk_base_diameter=base))
            diams.append(ground_truth_traits(model.skeleton, 0.5).trunk_diameter)
        assert all(b > a for a, b in zip(diams, diams[1:]))


class TestSampleSurface:
    def test_single_triangle_in_plane(self):
        mesh = TriMesh(vertices=[[0, 0, 1], [1, 0, 1], [0, 1, 1]], triangles=[[0, 1, 2]])
        cloud = sample_surface(mesh, 1000, seed=0)
        assert np.abs(cloud.points[:, 2] - 1.0).max() < 1e-9
        # inside the triangle: barycentric sums
        assert (cloud.points[:, 0] >= -1e-12).all() and (cloud.points[:, 1] >= -1e-12).all()
        assert (cloud.points[:, 0] + cloud.points[:, 1] <= 1 + 1e-12).all()

    def test_area_proportional_allocation(self):
        # 3:1 area ratio -> 3:1 point counts within binomial tolerance
        mesh = TriMesh(
            vertices=[[0, 0, 0], [3, 0, 0], [0, 2, 0], [10, 0, 0], [11, 0, 0], [10, 2, 0]],
            triangles=[[0, 1, 2], [3, 4, 5]],
        )
        n = 100_000
        cloud = sample_surface(mesh, n, seed=1)
        frac_big = float((cloud.points[:, 0] < 5).mean())
        assert abs(frac_big - 0.75) < 0.02 * 0.75

    def test_uniform_square_centroid(self):
        mesh = TriMesh(
            vertices=[[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
            triangles=[[0, 1, 2], [0, 2, 3]],
        )
        cloud = sample_surface(mesh, 10_000, seed=2)
        centroid = cloud.points.mean(axis=0)
        assert abs(centroid[0] - 0.5) < 0.01 and abs(centroid[1] - 0.5) < 0.01

    def test_deterministic(self, tree_model):
        a = sample_surface(tree_model.mesh, 1000, seed=9)
        b = sample_surface(tree_model.mesh, 1000, seed=9)
        assert np.array_equal(a.points, b.points)

    def test_rejects_empty_inputs(self, tree_model):
        with pytest.raises(InputError):
            sample_surface(tree_model.mesh, 0, seed=0)
        empty = TriMesh(vertices=np.zeros((3, 3)), triangles=np.empty((0, 3), dtype=int))
        with pytest.raises(InputError):
            sample_surface(empty, 10, seed=0)


def _straight_skeleton(radii, height=3.0):
    n = len(radii)
    z = np.linspace(0.0, height, n)
    pos = np.stack([np.zeros(n), np.zeros(n), z], axis=1)
    edges = [(i, i + 1) for i in range(n - 1)]
    return SkeletonGraph(positions=pos, radii=np.asarray(radii),
                         edges=np.asarray(edges), trunk_path=np.arange(n),
                         branch_roots=np.empty(0, dtype=int))


class TestGroundTruthTraits:
    def test_untapered_trunk_constant_diameter(self):
        sk = _straight_skeleton([0.03] * 10)
        for h in (0.1, 1.5, 2.9):
            assert ground_truth_traits(sk, h).trunk_diameter == pytest.approx(0.06, abs=1e-12)

    def test_linear_taper_midpoint(self):
        # base diameter 0.06 tapering to 0.03 over 3 m -> 0.045 at 1.5 m
        sk = _straight_skeleton(np.linspace(0.03, 0.015, 13), height=3.0)
        assert ground_truth_traits(sk, 1.5).trunk_diameter == pytest.approx(0.045, abs=1e-12)

    def test_measure_height_outside_rejected(self):
        sk = _straight_skeleton([0.03] * 5, height=2.0)
        with pytest.raises(InputError):
            ground_truth_traits(sk, 2.5)

    def test_branch_count_by_construction(self):
        model = generate_tree(TreeParams(seed=12, branch_count=18))
        assert ground_truth_traits(model.skeleton, 0.3).branch_count == 18


class TestRandomParams:
    def test_deterministic_per_index(self):
        assert random_params(7, 3) == random_params(7, 3)
        assert random_params(7, 3) != random_params(7, 4)

    def test_within_default_ranges(self):
        for i in range(20):
            p = random_params(1234, i)
            assert 2.0 <= p.trunk_height <= 3.5
            assert 15 <= p.branch_count <= 35
            assert 0 <= p.branch_zone[0] < p.branch_zone[1] <= 1
