"""Row-traversal capture simulation: trajectories, depth rendering, noise.

A virtual stereo-equivalent camera drives along a planting row at constant
speed and films the trees side-on.  Rendering is exact z-buffer depth;
``degrade_depth`` then layers on a stereo-like error model (value noise,
edge dropout, range cutoff).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from . import rng
from .errors import InputError
from .geom import CameraIntrinsics, DepthMap, Pose
from .raster import render_zbuffer
from .treegen import TriMesh

MPH_TO_MS = 0.44704
GRADIENT_EDGE_THRESHOLD = 0.1   # m per pixel step counts as a discontinuity
EDGE_DROPOUT_PROB = 0.5

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class RowSpec:
    """Geometry and timing of one pass along a planting row."""

    row_direction: tuple = (1.0, 0.0, 0.0)
    camera_offset: float = 2.0
    camera_height: float = 1.2
    speed: float = 2.0 * MPH_TO_MS
    fps: float = 15.0
    n_frames: int = 15
    look_at: str = "fixed-perpendicular"   # or "track-trunk"
    aim_height: Optional[float] = None

    def __post_init__(self):
        d = np.asarray(self.row_direction, dtype=float)
        if not np.isfinite(d).all() or np.linalg.norm(d) < 1e-12:
            raise InputError("row_direction must be a nonzero vector")
        if abs(np.dot(d / np.linalg.norm(d), WORLD_UP)) > 0.99:
            raise InputError("row_direction must not be vertical")
        if self.speed <= 0 or self.fps <= 0:
            raise InputError("speed and fps must be positive")
        if self.camera_offset <= 0:
            raise InputError("camera_offset must be positive")
        if self.look_at not in ("fixed-perpendicular", "track-trunk"):
            raise InputError(f"unknown look_at policy: {self.look_at!r}")
        object.__setattr__(self, "row_direction", tuple(float(x) for x in d))

    @property
    def frame_spacing(self) -> float:
        return self.speed / self.fps

    def to_dict(self) -> dict:
        return {
            "row_direction": list(self.row_direction),
            "camera_offset": self.camera_offset,
            "camera_height": self.camera_height,
            "speed": self.speed,
            "fps": self.fps,
            "n_frames": self.n_frames,
            "look_at": self.look_at,
            "aim_height": self.aim_height,
        }

    @staticmethod
    def from_dict(d: dict) -> "RowSpec":
        d = dict(d)
        if "row_direction" in d:
            d["row_direction"] = tuple(d["row_direction"])
        return RowSpec(**d)


@dataclass(frozen=True)
class NoiseSpec:
    """Stereo-like depth corruption: std = sigma_a + sigma_b * depth^2."""

    sigma_a: float = 0.0
    sigma_b: float = 0.0
    dropout_edge_px: int = 0
    max_range: float = float("inf")
    seed: int = 0

    def __post_init__(self):
        if self.sigma_a < 0 or self.sigma_b < 0 or self.dropout_edge_px < 0:
            raise InputError("noise parameters must be non-negative")
        if self.max_range <= 0:
            raise InputError("max_range must be positive")

    def to_dict(self) -> dict:
        return {
            "sigma_a": self.sigma_a,
            "sigma_b": self.sigma_b,
            "dropout_edge_px": self.dropout_edge_px,
            "max_range": None if np.isinf(self.max_range) else self.max_range,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "NoiseSpec":
        d = dict(d)
        if d.get("max_range") is None:
            d["max_range"] = float("inf")
        return NoiseSpec(**d)


def _camera_orientation(forward: np.ndarray) -> np.ndarray:
    """Rotation with columns (right, down, forward); +Y down in image, world +Z up."""
    f = forward / np.linalg.norm(forward)
    r = np.cross(f, WORLD_UP)
    nr = np.linalg.norm(r)
    if nr < 1e-12:
        raise InputError("camera cannot look straight up or down")
    r /= nr
    d = np.cross(f, r)
    return np.stack([r, d, f], axis=1)


def plan_trajectory(row: RowSpec, target=(0.0, 0.0, 0.0)) -> list[Pose]:
    """Equally spaced poses driving past ``target``, centered on the abeam frame."""
    if row.n_frames <= 0:
        raise InputError("trajectory needs at least one frame")
    target = np.asarray(target, dtype=float)
    direction = np.asarray(row.row_direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    lateral = np.cross(WORLD_UP, direction)
    lateral /= np.linalg.norm(lateral)

    spacing = row.frame_spacing
    base = target + lateral * row.camera_offset + WORLD_UP * row.camera_height
    aim_h = row.camera_height if row.aim_height is None else row.aim_height
    aim = target + WORLD_UP * aim_h

    poses = []
    for k in range(row.n_frames):
        s = (k - (row.n_frames - 1) / 2.0) * spacing
        pos = base + s * direction
        if row.look_at == "fixed-perpendicular":
            fwd = -lateral
        else:
            fwd = aim - pos
        poses.append(Pose(rotation=_camera_orientation(fwd), translation=pos))
    return poses


def render_scene(meshes: Sequence[tuple[TriMesh, int]], intr: CameraIntrinsics,
                 pose: Pose, znear: float = 0.05) -> tuple[DepthMap, np.ndarray]:
    """Z-buffer render of labeled meshes -> (metric depth, per-pixel label image).

    Labels follow the input tuples; background pixels carry -1.
    """
    if intr.width <= 0 or intr.height <= 0:
        raise InputError("degenerate intrinsics")
    cam_meshes = []
    for mesh, label in meshes:
        if mesh.n_triangles == 0:
            raise InputError("cannot render an empty mesh")
        verts_cam = pose.apply_inverse(mesh.vertices)
        cam_meshes.append((verts_cam, mesh.triangles, int(label)))
    zbuf, lbuf = render_zbuffer(cam_meshes, intr, znear=znear)
    depth = np.where(np.isfinite(zbuf), zbuf, np.nan)
    return DepthMap(width=intr.width, height=intr.height, depth=depth, kind="metric"), lbuf


def render_depth(mesh: TriMesh, intr: CameraIntrinsics, pose: Pose,
                 extra_meshes: Sequence[TriMesh] = (), znear: float = 0.05) -> DepthMap:
    """Depth of ``mesh`` (plus optional neighbor/ground meshes) from ``pose``."""
    labeled = [(mesh, 0)] + [(m, i + 1) for i, m in enumerate(extra_meshes)]
    depth, _ = render_scene(labeled, intr, pose, znear=znear)
    return depth


def render_empty(intr: CameraIntrinsics) -> DepthMap:
    """All-invalid frame (empty scene)."""
    return DepthMap(width=intr.width, height=intr.height,
                    depth=np.full((intr.height, intr.width), np.nan), kind="metric")


def degrade_depth(depth: DepthMap, noise: NoiseSpec) -> DepthMap:
    """Apply the stereo-like error model; identity when the spec is all zeros."""
    if depth.kind != "metric":
        raise InputError("degrade_depth expects a metric depth map")
    d = depth.depth.copy()
    valid = depth.valid_mask()

    if noise.sigma_a > 0 or noise.sigma_b > 0:
        gen = rng.stream(noise.seed, "depth-noise")
        g = gen.normal(0.0, 1.0, d.shape)
        std = noise.sigma_a + noise.sigma_b * np.square(d)
        d = np.where(valid, d + g * std, d)
        # Noise may push a sample through zero; such pixels become invalid.
        d = np.where(valid & (d <= 0), np.nan, d)
        valid = np.isfinite(d)

    if noise.dropout_edge_px > 0:
        src = depth.depth
        ok = depth.valid_mask()
        edge = np.zeros(d.shape, dtype=bool)
        dx = np.abs(np.diff(src, axis=1))
        jump_x = ok[:, 1:] & ok[:, :-1] & (dx > GRADIENT_EDGE_THRESHOLD)
        edge[:, 1:] |= jump_x
        edge[:, :-1] |= jump_x
        dy = np.abs(np.diff(src, axis=0))
        jump_y = ok[1:, :] & ok[:-1, :] & (dy > GRADIENT_EDGE_THRESHOLD)
        edge[1:, :] |= jump_y
        edge[:-1, :] |= jump_y
        size = 2 * noise.dropout_edge_px + 1
        near_edge = ndimage.binary_dilation(edge, structure=np.ones((size, size), dtype=bool))
        coin = rng.stream(noise.seed, "edge-dropout").uniform(0.0, 1.0, d.shape)
        drop = near_edge & (coin < EDGE_DROPOUT_PROB)
        d = np.where(drop, np.nan, d)

    if np.isfinite(noise.max_range):
        d = np.where(np.isfinite(d) & (d > noise.max_range), np.nan, d)

    return DepthMap(width=depth.width, height=depth.height, depth=d, kind="metric")


def render_mono_reldepth(mesh: TriMesh, intr: CameraIntrinsics, pose: Pose,
                         extra_meshes: Sequence[TriMesh] = (), znear: float = 0.05) -> DepthMap:
    """Idealized monocular relative depth: 1/d scaled so the nearest pixel is 1.

    Sky/background pixels are 0, matching the convention real monocular
    estimators are post-processed to before segmentation.
    """
    depth = render_depth(mesh, intr, pose, extra_meshes=extra_meshes, znear=znear)
    return mono_from_depth(depth)


def mono_from_depth(depth: DepthMap) -> DepthMap:
    valid = depth.valid_mask()
    rel = np.zeros((depth.height, depth.width), dtype=np.float64)
    if valid.any():
        inv = 1.0 / depth.depth[valid]
        rel[valid] = inv / inv.max()
    return DepthMap(width=depth.width, height=depth.height, depth=rel, kind="relative")


def make_ground_plane(half_extent: float = 6.0, z: float = 0.0, center=(0.0, 0.0),
                      cells: int = 2) -> TriMesh:
    """Square ground patch around ``center`` tessellated into a small grid."""
    cx, cy = center
    xs = np.linspace(cx - half_extent, cx + half_extent, cells + 1)
    ys = np.linspace(cy - half_extent, cy + half_extent, cells + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1)
    tris = []
    for i in range(cells):
        for j in range(cells):
            a = i * (cells + 1) + j
            b = (i + 1) * (cells + 1) + j
            tris.append((a, a + 1, b))
            tris.append((a + 1, b + 1, b))
    return TriMesh(verts, np.asarray(tris, dtype=np.int64))
