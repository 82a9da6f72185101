"""Procedural apple-tree generator with exact ground-truth structure.

Trees follow a tall-spindle architecture: one vertically dominant noisy
trunk and many short first-order laterals, bare of foliage.  Generation is
a pure function of its parameters (seed included); per-purpose random
streams keep every stage reproducible in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from . import rng
from .errors import InputError
from .geom import PointCloud, _frozen
from .skeleton import SkeletonGraph, TraitReport

TRUNK_NODE_STEP = 0.12          # m between regular trunk skeleton nodes
BRANCH_NODE_STEP = 0.08         # m between branch skeleton nodes
MIN_BRANCH_LENGTH = 0.05        # shorter laterals are never generated
BRANCH_TIP_TAPER = 0.45         # tip radius as a fraction of the root radius
MIN_TUBE_RADIUS = 0.0015        # m, keeps swept rings non-degenerate
RING_SIDES = 12
GT_MEASURE_HEIGHT = 0.30        # m above base used for ground-truth diameter


@dataclass(frozen=True)
class TreeParams:
    """Controls for one generated tree; ``seed`` fixes all random choices."""

    seed: int
    trunk_height: float = 2.8
    trunk_base_diameter: float = 0.06
    trunk_taper: float = 0.45
    branch_count: int = 24
    branch_zone: tuple = (0.35, 0.95)
    branch_elevation_range: tuple = (-15.0, 30.0)
    branch_length_range: tuple = (0.25, 0.80)
    branch_diameter_ratio: float = 0.35
    curvature_noise: float = 0.03

    def __post_init__(self):
        if self.trunk_height <= 0:
            raise InputError("trunk_height must be positive")
        if self.trunk_base_diameter <= 0:
            raise InputError("trunk_base_diameter must be positive")
        if not (0 < self.trunk_taper <= 1):
            raise InputError("trunk_taper must lie in (0, 1]")
        if self.branch_count < 0:
            raise InputError("branch_count must be non-negative")
        lo, hi = self.branch_zone
        if not (0 <= lo < hi <= 1):
            raise InputError("branch_zone must satisfy 0 <= low < high <= 1")
        if not (0 < self.branch_diameter_ratio < 1):
            raise InputError("branch_diameter_ratio must lie in (0, 1)")
        llo, lhi = self.branch_length_range
        if not (MIN_BRANCH_LENGTH <= llo <= lhi):
            raise InputError(f"branch lengths must be >= {MIN_BRANCH_LENGTH} m and ordered")
        if self.curvature_noise < 0:
            raise InputError("curvature_noise must be non-negative")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "trunk_height": self.trunk_height,
            "trunk_base_diameter": self.trunk_base_diameter,
            "trunk_taper": self.trunk_taper,
            "branch_count": self.branch_count,
            "branch_zone": list(self.branch_zone),
            "branch_elevation_range": list(self.branch_elevation_range),
            "branch_length_range": list(self.branch_length_range),
            "branch_diameter_ratio": self.branch_diameter_ratio,
            "curvature_noise": self.curvature_noise,
        }

    @staticmethod
    def from_dict(d: dict) -> "TreeParams":
        d = dict(d)
        for key in ("branch_zone", "branch_elevation_range", "branch_length_range"):
            if key in d:
                d[key] = tuple(d[key])
        return TreeParams(**d)


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh; indices into ``vertices``, no degenerate triangles."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise InputError("mesh vertices must be finite")
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise InputError("triangle indices out of range")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles)


def merge_meshes(meshes) -> TriMesh:
    verts, tris, base = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        base += m.vertices.shape[0]
    return TriMesh(np.concatenate(verts, axis=0), np.concatenate(tris, axis=0))


@dataclass(frozen=True)
class TreeModel:
    params: TreeParams
    skeleton: SkeletonGraph
    mesh: TriMesh
    traits: TraitReport


# --- generalized-cylinder sweep -------------------------------------------------

def _rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit vector a to unit vector b (Rodrigues)."""
    c = float(np.clip(np.dot(a, b), -1.0, 1.0))
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # Antiparallel: rotate 180 degrees about any perpendicular axis.
        perp = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, perp)
        axis /= np.linalg.norm(axis)
        K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        return np.eye(3) + 2.0 * (K @ K)
    axis = axis / s
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def sweep_tube(path: np.ndarray, radii: np.ndarray, sides: int = RING_SIDES) -> TriMesh:
    """Sweep a closed tube along a polyline using parallel-transport frames.

    Each ring is centered on its path node, so every vertex sits exactly one
    local radius from the skeleton.  Both ends are capped with triangle fans.
    """
    path = np.asarray(path, dtype=np.float64).reshape(-1, 3)
    radii = np.maximum(np.asarray(radii, dtype=np.float64).reshape(-1), MIN_TUBE_RADIUS)
    n = path.shape[0]
    if n < 2:
        raise InputError("tube path needs at least two nodes")

    tangents = np.empty_like(path)
    tangents[0] = path[1] - path[0]
    tangents[-1] = path[-1] - path[-2]
    tangents[1:-1] = path[2:] - path[:-2]
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)

    t0 = tangents[0]
    ref = np.array([0.0, 0.0, 1.0]) if abs(t0[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(t0, ref)
    e1 /= np.linalg.norm(e1)

    theta = 2.0 * np.pi * np.arange(sides) / sides
    cos_t, sin_t = np.cos(theta), np.sin(theta)

    verts = np.empty((n * sides + 2, 3))
    for i in range(n):
        if i > 0:
            e1 = _rotation_between(tangents[i - 1], tangents[i]) @ e1
            e1 -= np.dot(e1, tangents[i]) * tangents[i]
            e1 /= np.linalg.norm(e1)
        e2 = np.cross(tangents[i], e1)
        ring = path[i] + radii[i] * (np.outer(cos_t, e1) + np.outer(sin_t, e2))
        verts[i * sides:(i + 1) * sides] = ring
    base_center = n * sides
    tip_center = n * sides + 1
    verts[base_center] = path[0]
    verts[tip_center] = path[-1]

    tris = []
    for i in range(n - 1):
        a0, b0 = i * sides, (i + 1) * sides
        for k in range(sides):
            k1 = (k + 1) % sides
            tris.append((a0 + k, a0 + k1, b0 + k))
            tris.append((a0 + k1, b0 + k1, b0 + k))
    for k in range(sides):
        k1 = (k + 1) % sides
        tris.append((base_center, k1, k))
        last = (n - 1) * sides
        tris.append((tip_center, last + k, last + k1))
    return TriMesh(verts, np.asarray(tris, dtype=np.int64))


def tube_triangle_count(n_nodes: int, sides: int = RING_SIDES) -> int:
    """Triangles produced by sweep_tube for a chain of ``n_nodes``."""
    return 2 * sides * (n_nodes - 1) + 2 * sides


# --- generation -------------------------------------------------------------------

def _smooth_offsets(gen: np.random.Generator, length: float, amplitude: float,
                    n_controls: int = 5):
    """Cubic-spline lateral wander with zero offset at the start."""
    zc = np.linspace(0.0, length, n_controls)
    ox = gen.normal(0.0, amplitude, n_controls)
    oy = gen.normal(0.0, amplitude, n_controls)
    ox[0] = 0.0
    oy[0] = 0.0
    if amplitude == 0:
        ox[:] = 0.0
        oy[:] = 0.0
    return CubicSpline(zc, ox, bc_type="natural"), CubicSpline(zc, oy, bc_type="natural")


def generate_tree(params: TreeParams) -> TreeModel:
    """Build skeleton, swept mesh, and exact traits for one tree."""
    H = params.trunk_height
    r_base = params.trunk_base_diameter / 2.0
    taper = params.trunk_taper

    trunk_gen = rng.stream(params.seed, "trunk-noise")
    branch_gen = rng.stream(params.seed, "branch-placement")

    spline_x, spline_y = _smooth_offsets(trunk_gen, H, params.curvature_noise)

    # Trunk nodes on a regular grid plus one node per branch attachment height,
    # so every branch root is itself a trunk-path node.
    n_grid = max(6, int(np.ceil(H / TRUNK_NODE_STEP)) + 1)
    grid_z = np.linspace(0.0, H, n_grid)
    lo, hi = params.branch_zone
    branch_z = np.sort(branch_gen.uniform(lo * H, hi * H, params.branch_count))
    all_z = np.concatenate([grid_z, branch_z])
    order = np.argsort(all_z, kind="stable")
    all_z = all_z[order]
    keep = np.concatenate([[True], np.diff(all_z) > 1e-9])
    trunk_z = all_z[keep]

    def trunk_radius(z):
        return r_base * (1.0 + (taper - 1.0) * np.asarray(z) / H)

    trunk_pos = np.stack([spline_x(trunk_z), spline_y(trunk_z), trunk_z], axis=1)
    trunk_rad = trunk_radius(trunk_z)

    # Map each branch height to its trunk node index.
    branch_node_idx = np.searchsorted(trunk_z, branch_z)
    branch_node_idx = np.clip(branch_node_idx, 0, len(trunk_z) - 1)
    for j, zb in enumerate(branch_z):
        k = branch_node_idx[j]
        if abs(trunk_z[k] - zb) > abs(trunk_z[max(k - 1, 0)] - zb):
            branch_node_idx[j] = max(k - 1, 0)

    positions = [trunk_pos]
    radii = [trunk_rad]
    edges = []
    n_trunk = len(trunk_z)
    for i in range(n_trunk - 1):
        edges.append((i, i + 1))

    # Stratified azimuths: one stratum per branch, shuffled over heights.
    bc = params.branch_count
    strata = branch_gen.permutation(bc) if bc else np.empty(0, dtype=int)
    jitter = branch_gen.uniform(0.0, 1.0, bc)
    azimuths = (strata + jitter) * (2.0 * np.pi / bc) if bc else np.empty(0)
    elev_lo, elev_hi = np.deg2rad(params.branch_elevation_range)
    elevations = branch_gen.uniform(elev_lo, elev_hi, bc)
    llo, lhi = params.branch_length_range
    lengths = branch_gen.uniform(llo, lhi, bc)

    next_idx = n_trunk
    branch_roots = []
    branch_chains = []  # (node indices incl. root, sweep radii) per chain
    for j in range(bc):
        root = int(branch_node_idx[j])
        branch_roots.append(root)
        az, el, L = azimuths[j], elevations[j], lengths[j]
        d0 = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        e1 = np.cross(d0, [0.0, 0.0, 1.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(d0, e1)
        n_steps = max(3, int(np.ceil(L / BRANCH_NODE_STEP)) + 1)
        s = np.linspace(0.0, L, n_steps)
        amp = min(params.curvature_noise, 0.25 * L) * 0.5
        bx, by = _smooth_offsets(branch_gen, L, amp, n_controls=3)
        chain_pos = (trunk_pos[root]
                     + np.outer(s, d0)
                     + np.outer(bx(s), e1)
                     + np.outer(by(s), e2))
        r_root = params.branch_diameter_ratio * trunk_radius(trunk_z[root])
        chain_rad = r_root * (1.0 + (BRANCH_TIP_TAPER - 1.0) * s / L)
        node_ids = [root] + list(range(next_idx, next_idx + n_steps - 1))
        positions.append(chain_pos[1:])
        radii.append(np.maximum(chain_rad[1:], MIN_TUBE_RADIUS))
        for a, b in zip(node_ids[:-1], node_ids[1:]):
            edges.append((a, b))
        next_idx += n_steps - 1
        branch_chains.append((chain_pos, np.maximum(chain_rad, MIN_TUBE_RADIUS)))

    skeleton = SkeletonGraph(
        positions=np.concatenate(positions, axis=0),
        radii=np.concatenate(radii),
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        trunk_path=np.arange(n_trunk, dtype=np.int64),
        branch_roots=np.asarray(branch_roots, dtype=np.int64),
    )

    tubes = [sweep_tube(trunk_pos, trunk_rad)]
    for chain_pos, chain_rad in branch_chains:
        tubes.append(sweep_tube(chain_pos, chain_rad))
    mesh = merge_meshes(tubes)

    traits = ground_truth_traits(skeleton, GT_MEASURE_HEIGHT)
    return TreeModel(params=params, skeleton=skeleton, mesh=mesh, traits=traits)


def ground_truth_traits(skeleton: SkeletonGraph, measure_height: float = GT_MEASURE_HEIGHT) -> TraitReport:
    """Exact traits read off the skeleton (no estimation involved)."""
    tp = skeleton.trunk_path
    z = skeleton.positions[tp, 2]
    z_base = z[0]
    target = z_base + measure_height
    if not (z.min() - 1e-12 <= target <= z.max() + 1e-12):
        raise InputError("measure_height lies outside the trunk extent")
    radius = float(np.interp(target, z, skeleton.radii[tp]))
    height = float(skeleton.positions[:, 2].max() - skeleton.positions[:, 2].min())
    return TraitReport(
        trunk_diameter=2.0 * radius,
        branch_count=int(skeleton.branch_roots.size),
        tree_height=height,
        diagnostics={"measure_height": measure_height, "source": "skeleton"},
    )


def sample_surface(mesh: TriMesh, n: int, seed: int) -> PointCloud:
    """Draw ``n`` points area-uniformly over the mesh (seeded, deterministic)."""
    if n <= 0:
        raise InputError("sample count must be positive")
    if mesh.n_triangles == 0:
        raise InputError("cannot sample an empty mesh")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise InputError("mesh has zero surface area")
    gen = rng.stream(seed, "surface-sample")
    cum = np.cumsum(areas)
    pick = np.searchsorted(cum, gen.uniform(0.0, total, n), side="right")
    pick = np.minimum(pick, len(areas) - 1)
    a = mesh.vertices[mesh.triangles[pick, 0]]
    b = mesh.vertices[mesh.triangles[pick, 1]]
    c = mesh.vertices[mesh.triangles[pick, 2]]
    r1 = np.sqrt(gen.uniform(0.0, 1.0, n))
    r2 = gen.uniform(0.0, 1.0, n)
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return PointCloud(pts)


# --- dataset parameter sampling ------------------------------------------------

DEFAULT_PARAM_RANGES = {
    "trunk_height": (2.0, 3.5),
    "trunk_base_diameter": (0.04, 0.08),
    "trunk_taper": (0.30, 0.60),
    "branch_count": (15, 35),
    "branch_zone_low": (0.30, 0.40),
    "branch_zone_high": (0.90, 0.97),
    "branch_elevation": (-20.0, 30.0),
    "branch_length": (0.20, 0.90),
    "branch_diameter_ratio": (0.25, 0.45),
    "curvature_noise": (0.01, 0.05),
}


def random_params(dataset_seed: int, index: int, ranges: Optional[dict] = None) -> TreeParams:
    """Sample one tree's parameters from a dataset-level seed and tree index."""
    r = dict(DEFAULT_PARAM_RANGES)
    if ranges:
        r.update(ranges)
    gen = rng.stream(dataset_seed, "tree-params", index)
    lo, hi = r["branch_length"]
    length_lo = gen.uniform(lo, (lo + hi) / 2)
    length_hi = gen.uniform(length_lo + 0.05, hi + 0.05)
    return TreeParams(
        seed=rng.derive_seed(dataset_seed, "tree-seed", index),
        trunk_height=float(gen.uniform(*r["trunk_height"])),
        trunk_base_diameter=float(gen.uniform(*r["trunk_base_diameter"])),
        trunk_taper=float(gen.uniform(*r["trunk_taper"])),
        branch_count=int(gen.integers(r["branch_count"][0], r["branch_count"][1] + 1)),
        branch_zone=(float(gen.uniform(*r["branch_zone_low"])),
                     float(gen.uniform(*r["branch_zone_high"]))),
        branch_elevation_range=tuple(np.sort(gen.uniform(*r["branch_elevation"], 2)).tolist()),
        branch_length_range=(float(length_lo), float(length_hi)),
        branch_diameter_ratio=float(gen.uniform(*r["branch_diameter_ratio"])),
        curvature_noise=float(gen.uniform(*r["curvature_noise"])),
    )
