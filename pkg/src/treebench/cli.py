"""Command-line entry points wrapping the library stage by stage.

Exit codes: 0 success, 1 partial per-tree failures, 2 configuration error.
``TREEBENCH_OUT`` supplies the default output root when --out is omitted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .backends import DegradeSpec, ingest_external, oracle_backend, scan_drop_dir
from .camsim import NoiseSpec, RowSpec, degrade_depth, mono_from_depth, plan_trajectory, render_depth
from .errors import ConfigError, InputError
from .geom import ZED_EQUIVALENT
from .metrics import geom_metrics
from .pipeline import EvalReport, ExperimentConfig, run_pipeline, write_tables
from .qsm import QsmParams, extract_traits
from .registration import IcpParams, crop_box, icp_align
from .scaling import apply_scale, scale_factor
from .segmentation import FrameBundle, SegConfig, segment_tree
from .treegen import TreeModel, TreeParams, generate_tree, random_params, sample_surface
from .qsm import tree_height


def _out_dir(args, required: bool = True) -> Path:
    out = args.out or os.environ.get("TREEBENCH_OUT")
    if out is None:
        if required:
            raise ConfigError("no output directory: pass --out or set TREEBENCH_OUT")
        return Path(".")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _cmd_gen(args) -> int:
    out = _out_dir(args)
    ranges = io.read_json(args.params).get("param_ranges") if args.params else None
    for i in range(args.count):
        params = random_params(args.seed, i, ranges)
        model = generate_tree(params)
        tdir = out / f"tree_{i:04d}"
        tdir.mkdir(parents=True, exist_ok=True)
        io.save_obj(tdir / "mesh.obj", model.mesh)
        io.write_json(tdir / "skeleton.json", model.skeleton.to_dict())
        io.write_json(tdir / "traits.json", model.traits.to_dict())
        io.write_json(tdir / "params.json", params.to_dict())
        cloud = sample_surface(model.mesh, args.sample_n, seed=params.seed)
        io.save_ply(tdir / "sampled.ply", cloud)
    print(f"generated {args.count} trees under {out}")
    return 0


def _cmd_render(args) -> int:
    out = _out_dir(args)
    mesh = io.load_obj(args.tree)
    row = RowSpec.from_dict(io.read_json(args.row)) if args.row else RowSpec()
    noise = NoiseSpec.from_dict(io.read_json(args.noise)) if args.noise else None
    intr = io.load_intrinsics_json(args.intrinsics) if args.intrinsics else ZED_EQUIVALENT
    if args.views:
        lo, hi = (int(x) for x in args.views.split(".."))
        n = int(np.random.Generator(np.random.PCG64(args.seed)).integers(lo, hi + 1))
        row = replace(row, n_frames=n)
    poses = plan_trajectory(row)
    io.save_intrinsics_json(out / "intrinsics.json", intr)
    io.save_trajectory_json(out / "trajectory.json", poses)
    for f, pose in enumerate(poses):
        depth = render_depth(mesh, intr, pose)
        mono = mono_from_depth(depth)
        if noise is not None:
            depth = degrade_depth(depth, replace(noise, seed=noise.seed + f))
        io.save_depth_png(out / f"frame_{f:04d}.depth.png", depth)
        io.save_mono_png(out / f"frame_{f:04d}.mono.png", mono)
        io.save_pose_json(out / f"frame_{f:04d}.pose.json", pose)
    print(f"rendered {len(poses)} frames to {out}")
    return 0


def _cmd_segment(args) -> int:
    out = _out_dir(args)
    frames = Path(args.frames)
    cfg = SegConfig.from_dict(io.read_json(args.cfg)) if args.cfg else SegConfig()
    intr = io.load_intrinsics_json(frames / "intrinsics.json")
    clouds = []
    failures = 0
    for depth_path in sorted(frames.glob("frame_*.depth.png")):
        stem = depth_path.name.replace(".depth.png", "")
        bundle = FrameBundle(
            depth=io.load_depth_png(depth_path),
            mono=io.load_mono_png(frames / f"{stem}.mono.png"),
            intr=intr,
            pose=io.load_pose_json(frames / f"{stem}.pose.json"),
        )
        try:
            mask, cloud = segment_tree(bundle, cfg)
        except Exception as e:
            print(f"{stem}: {type(e).__name__}: {e}", file=sys.stderr)
            failures += 1
            continue
        io.save_mask_png(out / f"{stem}.mask.png", mask.keep)
        io.save_provenance_png(out / f"{stem}.prov.png", mask.provenance)
        io.write_json(out / f"{stem}.counts.json", mask.stage_counts())
        clouds.append(cloud)
    if clouds:
        from .geom import merge_clouds
        io.save_ply(out / "foreground.ply", merge_clouds(clouds))
    print(f"segmented {len(clouds)} frames ({failures} failed) to {out}")
    return 1 if failures else 0


def _cmd_oracle(args) -> int:
    out = _out_dir(args)
    spec = DegradeSpec.from_dict(io.read_json(args.spec)) if args.spec else DegradeSpec()
    trees = sorted(Path(args.trees).glob("tree_*/mesh.obj"))
    if not trees:
        raise InputError(f"no tree_*/mesh.obj under {args.trees}")
    failures = 0
    for mesh_path in trees:
        tree_id = mesh_path.parent.name
        mesh = io.load_obj(mesh_path)
        skeleton_path = mesh_path.parent / "skeleton.json"
        from .skeleton import SkeletonGraph, TraitReport
        skeleton = SkeletonGraph.from_dict(io.read_json(skeleton_path))
        traits = TraitReport.from_dict(io.read_json(mesh_path.parent / "traits.json"))
        params = TreeParams.from_dict(io.read_json(mesh_path.parent / "params.json"))
        model = TreeModel(params=params, skeleton=skeleton, mesh=mesh, traits=traits)
        try:
            result = oracle_backend(model, spec, sample_n=args.sample_n)
        except Exception as e:
            print(f"{tree_id}: {type(e).__name__}: {e}", file=sys.stderr)
            failures += 1
            continue
        io.save_ply(out / f"{tree_id}.ply", result.cloud)
        io.write_json(out / f"{tree_id}.meta.json", {"unitless_scale": result.unitless_scale})
    print(f"oracle wrote {len(trees) - failures} clouds to {out}")
    return 1 if failures else 0


def _cmd_ingest(args) -> int:
    out = _out_dir(args)
    entries = scan_drop_dir(args.backend)
    failures = 0
    for tree_id, entry in entries.items():
        try:
            result = ingest_external(entry["path"], sample_n=args.sample_n,
                                     unitless_scale=entry["unitless_scale"])
        except Exception as e:
            print(f"{tree_id}: {type(e).__name__}: {e}", file=sys.stderr)
            failures += 1
            continue
        io.save_ply(out / f"{tree_id}.ply", result.cloud)
        io.write_json(out / f"{tree_id}.meta.json", {"unitless_scale": result.unitless_scale,
                                                     "backend": result.backend})
    print(f"ingested {len(entries) - failures}/{len(entries)} drops to {out}")
    return 1 if failures else 0


def _cmd_scale(args) -> int:
    ref = io.load_ply(args.ref)
    rec = io.load_ply(args.rec)
    result = scale_factor(tree_height(ref), tree_height(rec))
    scaled = apply_scale(rec, result.s)
    io.save_ply(args.out_ply, scaled)
    if args.report:
        io.write_json(args.report, result.to_dict())
    print(f"s = {result.s:.6f} (h_ref {result.h_ref:.3f} m, h_rec {result.h_rec:.3f} m)")
    return 0


def _cmd_register(args) -> int:
    src = io.load_ply(args.src)
    tgt = io.load_ply(args.tgt)
    if args.crop_box:
        lo_hi = [float(x) for x in args.crop_box.split(",")]
        if len(lo_hi) != 6:
            raise ConfigError("--crop-box wants x0,y0,z0,x1,y1,z1")
        src = crop_box(src, lo_hi[:3], lo_hi[3:])
        tgt = crop_box(tgt, lo_hi[:3], lo_hi[3:])
    params = IcpParams(max_iter=args.max_iter, rms_delta=args.rms_delta)
    report = icp_align(src, tgt, params)
    io.write_json(args.out_json, report.transform.to_dict())
    if args.report:
        io.write_json(args.report, report.to_dict())
    print(f"converged={report.converged} iterations={report.iterations} rms={report.final_rms:.6g} m")
    return 0


def _cmd_metrics(args) -> int:
    out = _out_dir(args)
    preds = {p.stem: p for p in sorted(Path(args.pred).glob("*.ply"))}
    gts = {p.stem: p for p in sorted(Path(args.gt).glob("*.ply"))}
    shared = sorted(set(preds) & set(gts))
    if not shared:
        raise InputError("no matching cloud ids between --pred and --gt")
    rows = []
    for tree_id in shared:
        m = geom_metrics(io.load_ply(preds[tree_id]), io.load_ply(gts[tree_id]), args.voxel)
        rows.append({"tree": tree_id, **m.to_dict()})
        io.write_json(out / f"{tree_id}.metrics.json", m.to_dict())
    cds = np.array([r["chamfer_l2"] for r in rows])
    jsds = np.array([r["jsd"] for r in rows])
    summary = {"n": len(rows), "cd_mean": float(cds.mean()), "cd_std": float(cds.std()),
               "jsd_mean": float(jsds.mean()), "jsd_std": float(jsds.std())}
    io.write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return 0


def _cmd_traits(args) -> int:
    cloud = io.load_ply(args.cloud)
    params = QsmParams.from_dict(io.read_json(args.params)) if args.params else QsmParams()
    report = extract_traits(cloud, params)
    io.write_json(args.out_json, report.to_dict())
    print(json.dumps({"trunk_diameter": report.trunk_diameter,
                      "branch_count": report.branch_count,
                      "tree_height": report.tree_height}))
    return 0


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_dict(io.read_json(args.config)) if args.config else ExperimentConfig()
    out = _out_dir(args)
    report = run_pipeline(cfg, out_dir=out)
    write_tables(report, out / "tables")
    n_failed = sum(1 for r in report.records if r["status"].startswith("failed"))
    print(f"report: {out / 'report.json'} ({len(report.records)} records, {n_failed} failed)")
    return 1 if n_failed else 0


def _cmd_tables(args) -> int:
    out = _out_dir(args)
    report = EvalReport.from_dict(io.read_json(args.report))
    for path in write_tables(report, out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treebench",
                                     description="Synthetic orchard capture and 3D reconstruction evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic trees")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out")
    p.add_argument("--params", help="JSON file with param_ranges")
    p.add_argument("--sample-n", type=int, default=100_000, dest="sample_n")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("render", help="render a row traversal of one tree")
    p.add_argument("--tree", required=True, help="mesh OBJ")
    p.add_argument("--row", help="RowSpec JSON")
    p.add_argument("--noise", help="NoiseSpec JSON")
    p.add_argument("--views", help="A..B random view-count range")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intrinsics")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("segment", help="run background removal over a frame directory")
    p.add_argument("--frames", required=True)
    p.add_argument("--cfg", help="SegConfig JSON")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("oracle", help="degraded ground-truth reconstructions")
    p.add_argument("--trees", required=True, help="directory with tree_*/ from gen")
    p.add_argument("--spec", help="DegradeSpec JSON")
    p.add_argument("--sample-n", type=int, default=100_000, dest="sample_n")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("ingest", help="validate an external backend drop directory")
    p.add_argument("--backend", required=True)
    p.add_argument("--sample-n", type=int, default=100_000, dest="sample_n")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("scale", help="height-ratio scale retrieval")
    p.add_argument("--ref", required=True)
    p.add_argument("--rec", required=True)
    p.add_argument("--out", required=True, dest="out_ply")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_scale)

    p = sub.add_parser("register", help="rigid alignment of two clouds")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True, dest="out_json")
    p.add_argument("--report")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--rms-delta", type=float, default=1e-7)
    p.add_argument("--crop-box", help="x0,y0,z0,x1,y1,z1 local re-registration box")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("metrics", help="geometric metrics over matching cloud directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--voxel", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("traits", help="trait extraction from one cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--params", help="QsmParams JSON")
    p.add_argument("--out", required=True, dest="out_json")
    p.set_defaults(func=_cmd_traits)

    p = sub.add_parser("run", help="full experiment pipeline")
    p.add_argument("--config", help="ExperimentConfig JSON (defaults if omitted)")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("tables", help="render report tables")
    p.add_argument("--report", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_tables)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (InputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
