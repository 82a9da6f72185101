import json

import numpy as np
import pytest

from treebench import io
from treebench.cli import main
from treebench.geom import PointCloud, ZED_EQUIVALENT
from treebench.registration import RigidTransform, apply_transform


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    rc = main(["gen", "--count", "2", "--seed", "5", "--out", str(out), "--sample-n", "5000"])
    assert rc == 0
    return out


class TestGen:
    def test_artifacts(self, gen_dir):
        for tree_id in ("tree_0000", "tree_0001"):
            base = gen_dir / tree_id
            for name in ("mesh.obj", "skeleton.json", "traits.json", "params.json", "sampled.ply"):
                assert (base / name).exists()

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen", "--count", "1", "--seed", "9", "--out", str(a), "--sample-n", "1000"]) == 0
        assert main(["gen", "--count", "1", "--seed", "9", "--out", str(b), "--sample-n", "1000"]) == 0
        assert (a / "tree_0000" / "sampled.ply").read_bytes() == \
               (b / "tree_0000" / "sampled.ply").read_bytes()


class TestRenderSegmentTraits:
    def test_chain(self, gen_dir, tmp_path):
        frames = tmp_path / "frames"
        intr = tmp_path / "intr.json"
        io.save_intrinsics_json(intr, ZED_EQUIVALENT.scaled(0.15))
        row = tmp_path / "row.json"
        row.write_text(json.dumps({"camera_offset": 3.0, "camera_height": 1.5, "n_frames": 3}))
        rc = main(["render", "--tree", str(gen_dir / "tree_0000" / "mesh.obj"),
                   "--row", str(row), "--intrinsics", str(intr), "--out", str(frames)])
        assert rc == 0
        assert len(list(frames.glob("frame_*.depth.png"))) == 3

        seg = tmp_path / "seg"
        cfg = tmp_path / "seg.json"
        cfg.write_text(json.dumps({"max_range": 6.0, "z_ground": -0.5, "k": 1}))
        rc = main(["segment", "--frames", str(frames), "--cfg", str(cfg), "--out", str(seg)])
        assert rc == 0
        assert (seg / "foreground.ply").exists()
        assert len(list(seg.glob("frame_*.mask.png"))) == 3

        traits_json = tmp_path / "traits.json"
        rc = main(["traits", "--cloud", str(seg / "foreground.ply"), "--out", str(traits_json)])
        assert rc == 0
        report = json.loads(traits_json.read_text())
        assert report["tree_height"] is not None and report["tree_height"] > 1.0


class TestOracleIngest:
    def test_oracle_and_ingest(self, gen_dir, tmp_path):
        spec = tmp_path / "degrade.json"
        spec.write_text(json.dumps({"subsample_fraction": 0.5, "noise_sigma": 0.002,
                                    "strip_scale": True, "seed": 3}))
        oracle_out = tmp_path / "oracle"
        rc = main(["oracle", "--trees", str(gen_dir), "--spec", str(spec),
                   "--sample-n", "8000", "--out", str(oracle_out)])
        assert rc == 0
        assert (oracle_out / "tree_0000.ply").exists()
        meta = json.loads((oracle_out / "tree_0000.meta.json").read_text())
        assert meta["unitless_scale"] is True

        ingest_out = tmp_path / "ingested"
        rc = main(["ingest", "--backend", str(oracle_out), "--sample-n", "8000",
                   "--out", str(ingest_out)])
        assert rc == 0
        assert (ingest_out / "tree_0000.ply").exists()


class TestScaleRegisterMetrics:
    def test_scale(self, tmp_path, tree_cloud):
        ref = tmp_path / "ref.ply"
        rec = tmp_path / "rec.ply"
        io.save_ply(ref, tree_cloud)
        io.save_ply(rec, PointCloud(tree_cloud.points * 0.5))
        out = tmp_path / "scaled.ply"
        report = tmp_path / "scale.json"
        rc = main(["scale", "--ref", str(ref), "--rec", str(rec),
                   "--out", str(out), "--report", str(report)])
        assert rc == 0
        s = json.loads(report.read_text())["s"]
        assert abs(s - 2.0) < 1e-6

    def test_register(self, tmp_path, tree_cloud):
        src = tmp_path / "src.ply"
        tgt = tmp_path / "tgt.ply"
        T = RigidTransform(rotation=np.eye(3), translation=[0.05, 0.02, -0.01])
        io.save_ply(src, tree_cloud)
        io.save_ply(tgt, apply_transform(tree_cloud, T))
        out = tmp_path / "T.json"
        rc = main(["register", "--src", str(src), "--tgt", str(tgt), "--out", str(out)])
        assert rc == 0
        est = RigidTransform.from_dict(json.loads(out.read_text()))
        assert np.linalg.norm(est.translation - T.translation) < 1e-3

    def test_metrics(self, tmp_path, tree_cloud):
        pred = tmp_path / "pred"
        gt = tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        io.save_ply(pred / "tree_0000.ply", tree_cloud)
        io.save_ply(gt / "tree_0000.ply", tree_cloud)
        out = tmp_path / "metrics"
        rc = main(["metrics", "--pred", str(pred), "--gt", str(gt), "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["cd_mean"] == 0.0

    def test_metrics_no_matches_exit_one(self, tmp_path):
        (tmp_path / "pred").mkdir()
        (tmp_path / "gt").mkdir()
        rc = main(["metrics", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                   "--out", str(tmp_path / "out")])
        assert rc == 1


class TestRunAndTables:
    def test_run_and_tables(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "dataset": {"count": 1, "seed": 2, "param_ranges": {"trunk_height": [2.0, 2.5]}},
            "views": [3, 4],
            "sample_n": 8000,
            "save_frames": False,
        }))
        out = tmp_path / "run"
        rc = main(["run", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        assert (out / "report.json").exists()
        assert (out / "tables" / "geometric.csv").exists()

        tables_out = tmp_path / "tables2"
        rc = main(["tables", "--report", str(out / "report.json"), "--out", str(tables_out)])
        assert rc == 0
        assert (tables_out / "trunk_diameter.md").exists()

    def test_degenerate_backend_exits_nonzero(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "dataset": {"count": 1, "seed": 2, "param_ranges": {"trunk_height": [2.0, 2.5]}},
            "views": [3, 4],
            "sample_n": 8000,
            "save_frames": False,
            "backends": [{"name": "broken", "degrade": {
                "occlusion": [{"type": "halfspace", "normal": [0, 0, 1], "offset": -99.0}]}}],
        }))
        rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")])
        assert rc == 1

    def test_missing_out_is_config_error(self, monkeypatch):
        monkeypatch.delenv("TREEBENCH_OUT", raising=False)
        rc = main(["gen", "--count", "1"])
        assert rc == 2

    def test_env_var_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TREEBENCH_OUT", str(tmp_path / "envout"))
        rc = main(["gen", "--count", "1", "--seed", "3", "--sample-n", "500"])
        assert rc == 0
        assert (tmp_path / "envout" / "tree_0000" / "mesh.obj").exists()
