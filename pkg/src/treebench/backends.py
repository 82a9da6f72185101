"""Reconstruction-backend boundary: ingest external geometry, or degrade
ground truth through the built-in oracle for controlled pipeline validation.

External backends (diffusion, neural-field, photogrammetry pipelines) drop
files into ``backend/<name>/<tree_id>.{obj|ply}``; nothing here ever runs a
learned model.  Ingestion validates but never silently repairs geometry.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng
from .errors import DegradationError, IngestError, InputError
from .geom import PointCloud
from .io import load_obj, load_ply, read_json
from .treegen import TreeModel, TriMesh, sample_surface

DEFAULT_SAMPLE_N = 100_000
SCALE_STRIP_RANGE = (0.2, 0.8)


@dataclass(frozen=True)
class ReconResult:
    """One reconstruction ready for evaluation.

    ``unitless_scale`` marks geometry that still needs scale retrieval.
    """

    cloud: PointCloud
    backend: str
    mesh: Optional[TriMesh] = None
    unitless_scale: bool = False

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise InputError("reconstruction must contain geometry")


@dataclass(frozen=True)
class DegradeSpec:
    """Controlled corruption of ground truth, emulating backend error modes."""

    subsample_fraction: float = 1.0
    noise_sigma: float = 0.0
    occlusion: tuple = ()
    strip_scale: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.subsample_fraction <= 1):
            raise InputError("subsample_fraction must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be non-negative")
        object.__setattr__(self, "occlusion", tuple(dict(c) for c in self.occlusion))

    def to_dict(self) -> dict:
        return {
            "subsample_fraction": self.subsample_fraction,
            "noise_sigma": self.noise_sigma,
            "occlusion": [dict(c) for c in self.occlusion],
            "strip_scale": self.strip_scale,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "DegradeSpec":
        d = dict(d)
        if "occlusion" in d:
            d["occlusion"] = tuple(d["occlusion"])
        return DegradeSpec(**d)


def ingest_external(path, expected_kind: str = "auto",
                    sample_n: int = DEFAULT_SAMPLE_N, sample_seed: int = 0,
                    backend: Optional[str] = None,
                    unitless_scale: bool = False) -> ReconResult:
    """Load and validate one external OBJ mesh or PLY cloud.

    Meshes are additionally sampled into a cloud at ``sample_n`` points so
    downstream metrics always see point sets.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"{path}: no such file", location=str(path))
    suffix = path.suffix.lower()
    kind = {"auto": {".obj": "mesh", ".ply": "cloud"}.get(suffix),
            "mesh": "mesh", "cloud": "cloud"}[expected_kind if expected_kind in ("mesh", "cloud") else "auto"]
    if kind is None:
        raise IngestError(f"{path}: unsupported geometry extension {suffix!r}", location=str(path))
    if expected_kind == "mesh" and suffix != ".obj":
        raise IngestError(f"{path}: expected a mesh (.obj)", location=str(path))
    if expected_kind == "cloud" and suffix != ".ply":
        raise IngestError(f"{path}: expected a cloud (.ply)", location=str(path))
    name = backend or path.parent.name or "external"

    if kind == "mesh":
        mesh = load_obj(path)
        if mesh.n_triangles == 0:
            raise IngestError(f"{path}: mesh has no faces", location=str(path))
        if np.any(mesh.triangle_areas() <= 0):
            bad = int(np.nonzero(mesh.triangle_areas() <= 0)[0][0])
            raise IngestError(f"{path}: degenerate triangle {bad}", location=f"{path}:face {bad}")
        cloud = sample_surface(mesh, sample_n, seed=sample_seed)
        return ReconResult(cloud=cloud, mesh=mesh, backend=name, unitless_scale=unitless_scale)

    cloud = load_ply(path)
    if len(cloud) == 0:
        raise IngestError(f"{path}: cloud is empty", location=str(path))
    return ReconResult(cloud=cloud, backend=name, unitless_scale=unitless_scale)


def scan_drop_dir(backend_dir) -> dict[str, dict]:
    """Map tree id -> {path, unitless_scale} for one backend drop directory.

    A directory-level ``meta.json`` supplies defaults; ``<id>.meta.json``
    overrides per tree.
    """
    backend_dir = Path(backend_dir)
    if not backend_dir.is_dir():
        raise IngestError(f"{backend_dir}: not a directory", location=str(backend_dir))
    dir_meta = {}
    dir_meta_path = backend_dir / "meta.json"
    if dir_meta_path.exists():
        dir_meta = read_json(dir_meta_path)
    entries: dict[str, dict] = {}
    for p in sorted(backend_dir.iterdir()):
        if p.suffix.lower() not in (".obj", ".ply"):
            continue
        tree_id = p.stem
        meta = dict(dir_meta)
        per_tree = backend_dir / f"{tree_id}.meta.json"
        if per_tree.exists():
            meta.update(read_json(per_tree))
        entries[tree_id] = {"path": p, "unitless_scale": bool(meta.get("unitless_scale", False))}
    return entries


def _apply_crop(points: np.ndarray, crop: dict) -> np.ndarray:
    kind = crop.get("type")
    if kind == "halfspace":
        n = np.asarray(crop["normal"], dtype=float)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise InputError("halfspace crop needs a nonzero normal")
        n = n / norm
        keep = points @ n <= float(crop.get("offset", 0.0))
        return points[keep]
    if kind == "sector":
        # Remove an azimuthal wedge about the vertical axis through the
        # cloud's horizontal centroid (a hidden-side view).
        center = points[:, :2].mean(axis=0)
        az = np.degrees(np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0]))
        mid = float(crop["azimuth_deg"])
        half = float(crop["width_deg"]) / 2.0
        delta = (az - mid + 180.0) % 360.0 - 180.0
        return points[np.abs(delta) > half]
    raise InputError(f"unknown crop type: {kind!r}")


def oracle_backend(model: TreeModel, spec: DegradeSpec,
                   sample_n: int = DEFAULT_SAMPLE_N) -> ReconResult:
    """Sample the ground-truth mesh and corrupt it per ``spec``.

    Order: surface sample, occlusion crops, Gaussian jitter, random
    subsample, optional scale strip.  Deterministic per (model, spec).
    """
    cloud = sample_surface(model.mesh, sample_n,
                           seed=rng.derive_seed(spec.seed, "oracle-sample"))
    pts = cloud.points
    for crop in spec.occlusion:
        pts = _apply_crop(pts, crop)
        if pts.shape[0] == 0:
            raise DegradationError("occlusion crops removed every point")

    if spec.noise_sigma > 0:
        gen = rng.stream(spec.seed, "oracle-noise")
        pts = pts + gen.normal(0.0, spec.noise_sigma, pts.shape)

    if spec.subsample_fraction < 1.0:
        n_keep = max(1, int(round(spec.subsample_fraction * pts.shape[0])))
        gen = rng.stream(spec.seed, "oracle-subsample")
        keep = np.sort(gen.choice(pts.shape[0], size=n_keep, replace=False))
        pts = pts[keep]

    unitless = False
    if spec.strip_scale:
        factor = float(rng.stream(spec.seed, "oracle-scale").uniform(*SCALE_STRIP_RANGE))
        pts = pts * factor
        unitless = True

    return ReconResult(cloud=PointCloud(pts), backend="oracle", unitless_scale=unitless)
