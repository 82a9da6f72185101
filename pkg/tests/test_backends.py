import numpy as np
import pytest

from treebench import io
from treebench.backends import (DegradeSpec, ingest_external, oracle_backend,
                                scan_drop_dir)
from treebench.errors import DegradationError, IngestError, InputError
from treebench.geom import PointCloud
from treebench.metrics import chamfer_l2
from treebench.qsm import tree_height
from treebench.scaling import apply_scale, scale_factor
from treebench.treegen import sample_surface


class TestIngest:
    def test_ply_cloud(self, tmp_path, tree_cloud):
        path = tmp_path / "drop" / "tree_0000.ply"
        path.parent.mkdir()
        io.save_ply(path, PointCloud(tree_cloud.points[:10_000]))
        result = ingest_external(path)
        assert len(result.cloud) == 10_000
        assert result.backend == "drop"
        assert result.mesh is None

    def test_obj_mesh_sampled_at_density(self, tmp_path, tree_model):
        path = tmp_path / "m.obj"
        io.save_obj(path, tree_model.mesh)
        result = ingest_external(path, sample_n=12_345, sample_seed=1)
        assert result.mesh is not None
        assert len(result.cloud) == 12_345

    def test_nan_ply_names_record(self, tmp_path):
        path = tmp_path / "bad.ply"
        header = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n" \
                 b"property float x\nproperty float y\nproperty float z\nend_header\n"
        data = np.array([[0, 0, 0], [np.nan, 1, 1]], dtype="<f4")
        path.write_bytes(header + data.tobytes())
        with pytest.raises(IngestError) as exc:
            ingest_external(path)
        assert "record 1" in str(exc.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError):
            ingest_external(tmp_path / "nope.ply")

    def test_kind_mismatch(self, tmp_path, tree_cloud):
        path = tmp_path / "c.ply"
        io.save_ply(path, tree_cloud)
        with pytest.raises(IngestError):
            ingest_external(path, expected_kind="mesh")

    def test_empty_cloud_rejected(self, tmp_path):
        path = tmp_path / "empty.ply"
        io.save_ply(path, PointCloud(np.empty((0, 3))))
        with pytest.raises(IngestError):
            ingest_external(path)


class TestScanDropDir:
    def test_meta_layering(self, tmp_path, tree_cloud):
        d = tmp_path / "backend"
        d.mkdir()
        io.save_ply(d / "tree_0000.ply", tree_cloud)
        io.save_ply(d / "tree_0001.ply", tree_cloud)
        io.write_json(d / "meta.json", {"unitless_scale": True})
        io.write_json(d / "tree_0001.meta.json", {"unitless_scale": False})
        entries = scan_drop_dir(d)
        assert entries["tree_0000"]["unitless_scale"] is True
        assert entries["tree_0001"]["unitless_scale"] is False

    def test_not_a_directory(self, tmp_path):
        with pytest.raises(IngestError):
            scan_drop_dir(tmp_path / "missing")


class TestOracleBackend:
    def test_identity_matches_sampling_floor(self, tree_model):
        # floor derived from two independent samplings of the same mesh
        a = sample_surface(tree_model.mesh, 30_000, seed=100)
        b = sample_surface(tree_model.mesh, 30_000, seed=200)
        floor = chamfer_l2(a, b)
        result = oracle_backend(tree_model, DegradeSpec(seed=3), sample_n=30_000)
        gt = sample_surface(tree_model.mesh, 30_000, seed=300)
        assert chamfer_l2(result.cloud, gt) < 1.5 * floor
        assert result.unitless_scale is False

    def test_noise_increases_chamfer(self, tree_model):
        gt = sample_surface(tree_model.mesh, 30_000, seed=300)
        clean = oracle_backend(tree_model, DegradeSpec(seed=4), sample_n=30_000)
        noisy = oracle_backend(tree_model, DegradeSpec(noise_sigma=0.005, seed=4), sample_n=30_000)
        assert chamfer_l2(noisy.cloud, gt) > chamfer_l2(clean.cloud, gt)

    def test_subsample_fraction(self, tree_model):
        result = oracle_backend(tree_model, DegradeSpec(subsample_fraction=0.25, seed=5),
                                sample_n=20_000)
        assert len(result.cloud) == 5_000

    def test_halfspace_crop(self, tree_model):
        spec = DegradeSpec(occlusion=({"type": "halfspace", "normal": [0, 1, 0], "offset": 0.0},),
                           seed=6)
        result = oracle_backend(tree_model, spec, sample_n=20_000)
        assert (result.cloud.points[:, 1] <= 1e-12).all()
        assert len(result.cloud) > 0

    def test_sector_crop_removes_wedge(self, tree_model):
        spec = DegradeSpec(occlusion=({"type": "sector", "azimuth_deg": 0.0, "width_deg": 90.0},),
                           seed=7)
        result = oracle_backend(tree_model, spec, sample_n=20_000)
        pts = result.cloud.points
        # azimuths about the pre-crop center (the trunk axis, near the origin)
        full = sample_surface(tree_model.mesh, 20_000, seed=600)
        center = full.points[:, :2].mean(axis=0)
        az = np.degrees(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
        assert (np.abs((az + 180) % 360 - 180) < 40).mean() < 0.02

    def test_crop_everything_raises(self, tree_model):
        spec = DegradeSpec(occlusion=({"type": "halfspace", "normal": [0, 0, 1], "offset": -10.0},),
                           seed=8)
        with pytest.raises(DegradationError):
            oracle_backend(tree_model, spec, sample_n=5_000)

    def test_scale_strip_and_recovery(self, tree_model):
        gt = sample_surface(tree_model.mesh, 20_000, seed=400)
        h_ref = tree_height(gt)
        result = oracle_backend(tree_model, DegradeSpec(strip_scale=True, seed=9), sample_n=20_000)
        assert result.unitless_scale is True
        s = scale_factor(h_ref, tree_height(result.cloud)).s
        rescaled = apply_scale(result.cloud, s)
        assert abs(tree_height(rescaled) - h_ref) / h_ref < 1e-9

    def test_deterministic(self, tree_model):
        spec = DegradeSpec(subsample_fraction=0.5, noise_sigma=0.002, strip_scale=True, seed=10)
        a = oracle_backend(tree_model, spec, sample_n=10_000)
        b = oracle_backend(tree_model, spec, sample_n=10_000)
        assert np.array_equal(a.cloud.points, b.cloud.points)

    def test_severity_ordering_in_noise(self, tree_model):
        # degradation severity ordering induces non-decreasing median chamfer
        gt = sample_surface(tree_model.mesh, 15_000, seed=500)
        medians = []
        for sigma in (0.0, 0.002, 0.005):
            cds = []
            for seed in range(5):
                r = oracle_backend(tree_model, DegradeSpec(noise_sigma=sigma, seed=seed),
                                   sample_n=15_000)
                cds.append(chamfer_l2(r.cloud, gt))
            medians.append(np.median(cds))
        assert medians[0] <= medians[1] <= medians[2]

    def test_bad_spec_rejected(self):
        with pytest.raises(InputError):
            DegradeSpec(subsample_fraction=0.0)
        with pytest.raises(InputError):
            DegradeSpec(noise_sigma=-1.0)
