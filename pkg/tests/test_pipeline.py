import json

import numpy as np
import pytest

from treebench.backends import DegradeSpec
from treebench.errors import ConfigError, InputError
from treebench.metrics import chamfer_l2
from treebench.pipeline import (BackendSpec, DatasetSpec, EvalReport,
                                ExperimentConfig, make_tables, run_pipeline,
                                write_tables, _DEFAULT_RANGES)
from treebench.treegen import generate_tree, random_params, sample_surface


def _tiny_config(count=2, **kwargs):
    defaults = dict(
        dataset=DatasetSpec(count=count, seed=11, param_ranges=_DEFAULT_RANGES),
        views=(4, 5),
        backends=(BackendSpec(name="oracle", degrade=DegradeSpec()),),
        sample_n=20_000,
        save_frames=False,
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


@pytest.fixture(scope="module")
def tiny_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = _tiny_config()
    return cfg, run_pipeline(cfg, out_dir=out), out


class TestRunPipeline:
    def test_identity_oracle_hits_sampling_floor(self, tiny_report):
        cfg, report, _ = tiny_report
        assert all(r["status"] == "ok" for r in report.records)
        for i, rec in enumerate(report.records):
            params = random_params(cfg.dataset.seed, i, cfg.dataset.param_ranges)
            model = generate_tree(params)
            a = sample_surface(model.mesh, cfg.sample_n, seed=1)
            b = sample_surface(model.mesh, cfg.sample_n, seed=2)
            floor = chamfer_l2(a, b)
            assert rec["cd"] < 1.5 * floor

    def test_artifacts_persisted(self, tiny_report):
        _, _, out = tiny_report
        assert (out / "report.json").exists()
        assert (out / "config.json").exists()
        assert (out / "trees" / "tree_0000" / "mesh.obj").exists()
        assert (out / "trees" / "tree_0000" / "gt.ply").exists()
        assert (out / "backends" / "oracle" / "tree_0000.aligned.ply").exists()

    def test_degenerate_crop_isolated_per_tree(self, tmp_path):
        bad = DegradeSpec(occlusion=({"type": "halfspace", "normal": [0, 0, 1], "offset": -99.0},))
        cfg = _tiny_config(backends=(BackendSpec(name="broken", degrade=bad),))
        report = run_pipeline(cfg, out_dir=tmp_path)
        assert all(r["status"].startswith("failed:") for r in report.records)
        assert all("error" in r for r in report.records)
        # aggregates still well-formed
        assert report.aggregates["broken"]["n_failed"] == 2

    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = _tiny_config()
        a = run_pipeline(cfg, out_dir=tmp_path / "a")
        b = run_pipeline(cfg, out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "report.json").read_bytes() == \
               (tmp_path / "b" / "report.json").read_bytes()
        assert a.to_json() == b.to_json()

    def test_worker_pool_matches_serial(self, tmp_path):
        cfg = _tiny_config()
        serial = run_pipeline(cfg)
        threaded = run_pipeline(_tiny_config(workers=2))
        assert serial.to_json() == threaded.to_json()


class TestAggregates:
    def test_recomputable_from_records(self, tiny_report):
        # independent recomputation of the aggregate rows
        _, report, _ = tiny_report
        agg = report.aggregates["oracle"]
        cds = [r["cd"] for r in report.records if r["backend"] == "oracle"]
        assert agg["cd_mean"] == np.mean(cds)
        assert agg["cd_std"] == np.std(cds)
        est = [r["traits"]["trunk_diameter"] * 100 for r in report.records]
        gt = [r["gt"]["trunk_diameter"] * 100 for r in report.records]
        ae = np.abs(np.array(est) - np.array(gt))
        assert agg["trunk_diameter"]["mae_mean"] == np.mean(ae)

    def test_throughput_from_timings(self, tmp_path):
        cfg = _tiny_config(count=1, timings={"baseline_seconds": 10800.0, "method_seconds": 30.0,
                                             "baseline_count": 6, "method_count": 6})
        report = run_pipeline(cfg)
        assert report.aggregates["throughput"]["ratio"] == 360.0


class TestMakeTables:
    def test_single_method_single_tree_zero_std(self, tmp_path):
        cfg = _tiny_config(count=1)
        report = run_pipeline(cfg)
        tables = make_tables(report)
        row = tables["geometric.csv"].splitlines()[1].split(",")
        assert row[0] == "oracle"
        assert float(row[2]) == 0.0  # std over one tree

    def test_unavailable_traits_render_dashes(self):
        records = [{"tree": "tree_0000", "backend": "fog", "status": "trait-unavailable",
                    "cd": 0.05, "jsd": 0.6,
                    "gt": {"trunk_diameter": 0.06, "branch_count": 20},
                    "traits": {"trunk_diameter": None, "branch_count": None}}]
        report = EvalReport(config_hash="x", records=records,
                            aggregates={"fog": {"n_trees": 1, "n_ok": 0,
                                                "n_trait_unavailable": 1, "n_failed": 0,
                                                "cd_mean": 0.05, "cd_std": 0.0,
                                                "jsd_mean": 0.6, "jsd_std": 0.0,
                                                "trunk_diameter": None, "branch_count": None}},
                            provenance={})
        tables = make_tables(report)
        assert "| fog | -- | -- | -- | -- | -- | -- |" in tables["trunk_diameter.md"]
        assert tables["branch_count.csv"].splitlines()[1] == "fog,--,--,--,--,--,--"

    def test_empty_report_rejected(self):
        report = EvalReport(config_hash="x", records=[], aggregates={}, provenance={})
        with pytest.raises(InputError):
            make_tables(report)

    def test_write_tables(self, tiny_report, tmp_path):
        _, report, _ = tiny_report
        written = write_tables(report, tmp_path / "tables")
        assert any(p.endswith("geometric.csv") for p in written)
        assert any(p.endswith("trunk_diameter.md") for p in written)


class TestConfig:
    def test_json_round_trip(self):
        cfg = _tiny_config()
        back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back.canonical_json() == cfg.canonical_json()
        assert back.config_hash() == cfg.config_hash()

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"dataset": {"count": -3}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"views": [9, 3]})
        with pytest.raises(ConfigError):
            BackendSpec(name="x")

    def test_hash_changes_with_content(self):
        a = _tiny_config(count=2)
        b = _tiny_config(count=3)
        assert a.config_hash() != b.config_hash()
