"""Core geometry: point clouds, camera model, depth maps, spatial index, voxel grids.

Conventions (fixed project-wide):
  camera: right-handed, +Z forward optical axis, +X right, +Y down in image;
  world: +Z up.  Invalid depth is a non-finite value in memory.
All types are immutable after construction and every operation is a pure
function, so everything here is safe to use from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_rotation(R: np.ndarray, tol: float = 1e-9) -> None:
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        raise InputError("rotation matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise InputError("rotation matrix determinant is not +1")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Ideal pinhole intrinsics (no distortion model)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise InputError("image dimensions must be positive")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for the same field of view at ``factor`` times the resolution."""
        return CameraIntrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_dict(d: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


# Default virtual stereo head: 1920x1200 with ~84 deg horizontal FOV.
ZED_EQUIVALENT = CameraIntrinsics(fx=1069.0, fy=1069.0, cx=960.0, cy=600.0, width=1920, height=1200)


@dataclass(frozen=True)
class _RigidMotion:
    """Shared rotation+translation value type (orthonormal, det +1)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InputError("rigid motion entries must be finite")
        _check_rotation(R)
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls):
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """R p + t for one point or an (n,3) array."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.translation) @ self.rotation

    def inverse(self):
        return type(self)(rotation=self.rotation.T, translation=-self.rotation.T @ self.translation)

    def compose(self, other: "_RigidMotion"):
        """self o other: apply ``other`` first, then self."""
        return type(self)(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict):
        return cls(rotation=np.array(d["rotation"], dtype=float), translation=np.array(d["translation"], dtype=float))


class Pose(_RigidMotion):
    """Camera-to-world pose: p_world = R p_cam + t."""


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth image.

    ``kind='metric'``: meters along the optical axis, finite entries must be
    positive, non-finite marks invalid pixels.
    ``kind='relative'``: normalized inverse depth in [0,1], all finite,
    value 0 encodes sky/background.
    """

    width: int
    height: int
    depth: np.ndarray
    kind: str = "metric"

    def __post_init__(self):
        d = np.array(self.depth, dtype=np.float64).reshape(self.height, self.width)
        if self.kind == "metric":
            finite = np.isfinite(d)
            if np.any(d[finite] <= 0):
                raise InputError("metric depth entries must be positive where finite")
        elif self.kind == "relative":
            if not np.all(np.isfinite(d)):
                raise InputError("relative depth maps must be all-finite")
            if np.any(d < 0):
                raise InputError("relative depth entries must be non-negative")
        else:
            raise InputError(f"unknown depth map kind: {self.kind!r}")
        object.__setattr__(self, "depth", _frozen(d))

    def valid_mask(self) -> np.ndarray:
        if self.kind == "metric":
            return np.isfinite(self.depth)
        return self.depth > 0

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask().sum())


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points in meters with optional per-point RGB in [0,1]."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise InputError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(p))
        if self.colors is not None:
            c = np.array(self.colors, dtype=np.float64).reshape(-1, 3)
            if c.shape[0] != p.shape[0]:
                raise InputError("colors length must match points length")
            if np.any(c < 0) or np.any(c > 1):
                raise InputError("colors must lie in [0,1]")
            object.__setattr__(self, "colors", _frozen(c))

    def __len__(self) -> int:
        return self.points.shape[0]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            raise InputError("empty cloud has no bounds")
        return self.points.min(axis=0), self.points.max(axis=0)


def merge_clouds(clouds: Sequence[PointCloud]) -> PointCloud:
    """Concatenate clouds in order; colors survive only if every part has them."""
    parts = [c for c in clouds if len(c) > 0]
    if not parts:
        raise InputError("nothing to merge")
    pts = np.concatenate([c.points for c in parts], axis=0)
    if all(c.colors is not None for c in parts):
        cols = np.concatenate([c.colors for c in parts], axis=0)
        return PointCloud(pts, cols)
    return PointCloud(pts)


class NNIndex:
    """Immutable exact nearest-neighbor index over a point cloud.

    Results match an exhaustive linear scan; exact-distance ties resolve to
    the lowest point index.  Safe for concurrent read-only queries.
    """

    def __init__(self, cloud):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        pts = pts.reshape(-1, 3)
        if pts.shape[0] == 0:
            raise InputError("cannot index an empty cloud")
        self._points = _frozen(pts.copy())
        self._tree = cKDTree(self._points, balanced_tree=True)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def __len__(self) -> int:
        return self._points.shape[0]

    def nearest(self, q) -> tuple[int, float]:
        """Index and Euclidean distance of the nearest stored point to ``q``."""
        q = np.asarray(q, dtype=np.float64).reshape(3)
        d1, _ = self._tree.query(q)
        # Gather every candidate at the minimal distance so ties break by index.
        r = d1 * (1.0 + 1e-12) + 1e-300
        cand = self._tree.query_ball_point(q, r)
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        dd = np.sqrt(np.sum((self._points[cand] - q) ** 2, axis=1))
        best = cand[dd == dd.min()][0]
        return int(best), float(np.sqrt(np.sum((self._points[best] - q) ** 2)))

    def nearest_many(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized nearest lookup: (indices, distances) per query row.

        Distances are recomputed from the matched coordinates so they agree
        bit-for-bit with a plain numpy linear scan.
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        _, idx = self._tree.query(q, k=1, workers=-1)
        idx = idx.astype(np.int64)
        d = np.sqrt(np.sum((self._points[idx] - q) ** 2, axis=1))
        return idx, d

    def median_spacing(self) -> float:
        """Median distance to each stored point's nearest other point."""
        if len(self) < 2:
            return 0.0
        d, _ = self._tree.query(self._points, k=2, workers=-1)
        return float(np.median(d[:, 1]))


@dataclass(frozen=True)
class VoxelGrid:
    """Dense occupancy-count grid anchored at ``origin``."""

    origin: np.ndarray
    voxel_size: float
    dims: tuple
    counts: np.ndarray

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise InputError("voxel_size must be positive")
        o = np.array(self.origin, dtype=np.float64).reshape(3)
        c = np.asarray(self.counts)
        if c.shape != tuple(self.dims):
            raise InputError("counts shape must equal dims")
        object.__setattr__(self, "origin", _frozen(o))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "counts", _frozen(np.array(c, dtype=np.int64)))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


_MAX_DENSE_VOXELS = 200_000_000


def voxel_indices(points: np.ndarray, voxel_size: float, origin: np.ndarray) -> np.ndarray:
    """floor((p - origin)/voxel_size) per point, as int64 triples."""
    return np.floor((points - origin) / voxel_size).astype(np.int64)


def voxelize(cloud: PointCloud, voxel_size: float, origin=None) -> VoxelGrid:
    """Bin points into a dense count grid; counts always sum to the point count."""
    if voxel_size <= 0:
        raise InputError("voxel_size must be positive")
    if len(cloud) == 0:
        raise InputError("cannot voxelize an empty cloud")
    lo, hi = cloud.bounds()
    if origin is None:
        origin = lo
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    if np.any(origin > lo + 1e-12):
        raise InputError("origin must not exceed the cloud minimum corner")
    idx = voxel_indices(cloud.points, voxel_size, origin)
    dims = idx.max(axis=0) + 1
    if int(np.prod(dims)) > _MAX_DENSE_VOXELS:
        raise InputError("voxel grid too large; use a coarser voxel_size")
    counts = np.zeros(tuple(dims), dtype=np.int64)
    np.add.at(counts, (idx[:, 0], idx[:, 1], idx[:, 2]), 1)
    return VoxelGrid(origin=origin, voxel_size=voxel_size, dims=tuple(dims), counts=counts)


def downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One point per occupied voxel, at the centroid of that voxel's members.

    Output is ordered by lexicographic voxel index, so the result is a pure
    function of the input cloud.
    """
    if voxel_size <= 0:
        raise InputError("voxel_size must be positive")
    if len(cloud) == 0:
        raise InputError("cannot downsample an empty cloud")
    lo, _ = cloud.bounds()
    idx = voxel_indices(cloud.points, voxel_size, lo)
    _, inverse, counts = np.unique(idx, axis=0, return_inverse=True, return_counts=True)
    n_vox = counts.shape[0]
    sums = np.zeros((n_vox, 3), dtype=np.float64)
    np.add.at(sums, inverse, cloud.points)
    centroids = sums / counts[:, None]
    if cloud.colors is not None:
        csums = np.zeros((n_vox, 3), dtype=np.float64)
        np.add.at(csums, inverse, cloud.colors)
        return PointCloud(centroids, np.clip(csums / counts[:, None], 0.0, 1.0))
    return PointCloud(centroids)


def unproject(depth: DepthMap, intr: CameraIntrinsics, pose: Pose) -> PointCloud:
    """Lift every valid depth pixel through the inverse pinhole model.

    Output order is the row-major scan order of the valid pixels.
    """
    if depth.kind != "metric":
        raise InputError("unproject requires a metric depth map")
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise InputError("intrinsics dimensions do not match the depth map")
    valid = depth.valid_mask()
    v, u = np.nonzero(valid)
    d = depth.depth[v, u]
    x = (u - intr.cx) * d / intr.fx
    y = (v - intr.cy) * d / intr.fy
    cam = np.stack([x, y, d], axis=1)
    return PointCloud(pose.apply(cam))


def project(points: np.ndarray, intr: CameraIntrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """World points -> continuous pixel coordinates (u, v) and camera-frame depth."""
    cam = pose.apply_inverse(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    return np.stack([u, v], axis=1), z
