"""Background-removal cascade producing per-pixel tree masks.

Stages only ever remove pixels: distance cutoff on metric depth, sky mask
from relative monocular depth, ground mask from unprojected world height,
then a k-means cluster filter that drops spatially inconsistent pixel
groups (neighboring trees).  Every pixel ends up with exactly one
provenance label recording the first stage that removed it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import EmptySegmentationError, InputError
from .geom import CameraIntrinsics, DepthMap, PointCloud, Pose, unproject

LABEL_FAR = 0
LABEL_SKY = 1
LABEL_GROUND = 2
LABEL_CLUSTER = 3
LABEL_KEPT = 4
LABEL_NAMES = ("far", "sky", "ground", "cluster", "kept")


@dataclass(frozen=True)
class FrameBundle:
    """One captured frame: metric depth, relative mono depth, camera geometry."""

    depth: DepthMap
    mono: DepthMap
    intr: CameraIntrinsics
    pose: Pose

    def __post_init__(self):
        if self.depth.kind != "metric":
            raise InputError("bundle depth must be metric")
        if self.mono.kind != "relative":
            raise InputError("bundle mono must be relative")
        dims = (self.depth.width, self.depth.height)
        if (self.mono.width, self.mono.height) != dims:
            raise InputError("mono dimensions must match depth")
        if (self.intr.width, self.intr.height) != dims:
            raise InputError("intrinsics dimensions must match depth")


@dataclass(frozen=True)
class SegMask:
    """Keep mask plus per-pixel provenance labels (exactly one per pixel)."""

    width: int
    height: int
    keep: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        k = np.array(self.keep, dtype=bool).reshape(self.height, self.width)
        p = np.array(self.provenance, dtype=np.uint8).reshape(self.height, self.width)
        if np.any(k != (p == LABEL_KEPT)):
            raise InputError("provenance must mark kept pixels as kept")
        k.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "keep", k)
        object.__setattr__(self, "provenance", p)

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())

    def stage_counts(self) -> dict:
        return {name: int((self.provenance == code).sum())
                for code, name in enumerate(LABEL_NAMES)}


def _mask_from_removed(width, height, removed: np.ndarray, label: int) -> SegMask:
    prov = np.full((height, width), LABEL_KEPT, dtype=np.uint8)
    prov[removed] = label
    return SegMask(width=width, height=height, keep=~removed, provenance=prov)


@dataclass(frozen=True)
class SegConfig:
    """Thresholds for the cascade; all config-exposed, defaults for a 2 m standoff."""

    max_range: float = 3.5
    tau_sky: float = 0.05
    z_ground: float = 0.05
    k: int = 3
    keep_policy: str = "center"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "max_range": self.max_range,
            "tau_sky": self.tau_sky,
            "z_ground": self.z_ground,
            "k": self.k,
            "keep_policy": self.keep_policy,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "SegConfig":
        return SegConfig(**d)


def distance_filter(depth: DepthMap, max_range: float) -> SegMask:
    """Keep pixels with valid depth <= max_range; everything else is 'far'."""
    if max_range <= 0:
        raise InputError("max_range must be positive")
    if depth.kind != "metric":
        raise InputError("distance_filter expects metric depth")
    keep = depth.valid_mask() & (depth.depth <= max_range)
    return _mask_from_removed(depth.width, depth.height, ~keep, LABEL_FAR)


def sky_mask(mono: DepthMap, tau_sky: float) -> SegMask:
    """Remove pixels whose relative inverse depth falls below ``tau_sky``."""
    if not (0 < tau_sky < 1):
        raise InputError("tau_sky must lie in (0, 1)")
    if mono.kind != "relative":
        raise InputError("sky_mask expects a relative depth map")
    removed = mono.depth < tau_sky
    return _mask_from_removed(mono.width, mono.height, removed, LABEL_SKY)


def ground_mask(bundle: FrameBundle, z_ground: float) -> SegMask:
    """Remove pixels whose unprojected world height is at or below ``z_ground``."""
    if not np.isfinite(z_ground):
        raise InputError("z_ground must be finite")
    depth = bundle.depth
    valid = depth.valid_mask()
    v, u = np.nonzero(valid)
    d = depth.depth[v, u]
    x = (u - bundle.intr.cx) * d / bundle.intr.fx
    y = (v - bundle.intr.cy) * d / bundle.intr.fy
    world = bundle.pose.apply(np.stack([x, y, d], axis=1))
    removed = np.zeros((depth.height, depth.width), dtype=bool)
    removed[v, u] = world[:, 2] <= z_ground
    return _mask_from_removed(depth.width, depth.height, removed, LABEL_GROUND)


# --- seeded k-means -----------------------------------------------------------

def kmeans(features: np.ndarray, k: int, seed: int, max_iter: int = 100,
           tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Plain Lloyd k-means with k-means++ init.

    Returns (labels, centers, objective history); the objective (mean squared
    distance to the assigned center) is non-increasing across iterations.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise InputError("k must be at least 1")
    if n < k:
        raise InputError("fewer samples than clusters")
    gen = rng.stream(seed, "kmeans-init")

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[int(gen.integers(n))]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = x[int(gen.integers(n))]
            break
        probs = d2 / total
        centers[j] = x[int(gen.choice(n, p=probs))]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))

    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dists = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dists, axis=1)
        history.append(float(dists[np.arange(n), labels].mean()))
        new_centers = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
            else:
                # Re-seed an empty cluster at the worst-served point.
                far = np.argmax(dists[np.arange(n), labels])
                new_centers[j] = x[far]
        shift = np.max(np.linalg.norm(new_centers - centers, axis=1))
        centers = new_centers
        if shift < tol:
            break
    dists = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(dists, axis=1)
    history.append(float(dists[np.arange(n), labels].mean()))
    return labels, centers, history


def cluster_filter(bundle: FrameBundle, current_mask: SegMask, k: int = 3,
                   keep_policy: str = "center", seed: int = 0) -> tuple[SegMask, str]:
    """Drop spatially inconsistent pixel clusters, keeping one tree.

    Features per kept pixel: normalized image column and normalized
    along-row world coordinate (the camera's horizontal right axis), which
    stays discriminative when neighbor trees overlap vertically.
    Returns (mask, status); status is "skipped:<reason>" when clustering
    could not run and the mask passed through unchanged.
    """
    if k < 1:
        raise InputError("k must be at least 1")
    if keep_policy != "center":
        raise InputError(f"unknown keep_policy: {keep_policy!r}")
    if current_mask.n_kept == 0:
        raise InputError("current_mask keeps no pixels")

    depth = bundle.depth
    usable = current_mask.keep & depth.valid_mask()
    v, u = np.nonzero(usable)
    if len(v) < k:
        return current_mask, "skipped:fewer-kept-pixels-than-k"

    d = depth.depth[v, u]
    x = (u - bundle.intr.cx) * d / bundle.intr.fx
    y = (v - bundle.intr.cy) * d / bundle.intr.fy
    world = bundle.pose.apply(np.stack([x, y, d], axis=1))
    right = bundle.pose.rotation[:, 0].copy()
    right[2] = 0.0
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        return current_mask, "skipped:degenerate-row-axis"
    right /= norm
    along = world @ right

    u_norm = u / max(bundle.intr.width - 1, 1)
    span = along.max() - along.min()
    a_norm = (along - along.min()) / span if span > 0 else np.zeros_like(along)
    feats = np.stack([u_norm, a_norm], axis=1)

    labels, centers, _ = kmeans(feats, k, seed=seed)
    target = int(np.argmin(np.abs(centers[:, 0] - 0.5)))
    removed_flat = labels != target

    removed = np.zeros((depth.height, depth.width), dtype=bool)
    removed[v[removed_flat], u[removed_flat]] = True
    prov = current_mask.provenance.copy()
    prov[removed] = LABEL_CLUSTER
    keep = current_mask.keep & ~removed
    prov[keep] = LABEL_KEPT
    return SegMask(width=depth.width, height=depth.height, keep=keep, provenance=prov), "ok"


def segment_tree(bundle: FrameBundle, cfg: SegConfig) -> tuple[SegMask, PointCloud]:
    """Full cascade; returns the final mask and the unprojected foreground cloud."""
    dist = distance_filter(bundle.depth, cfg.max_range)
    sky = sky_mask(bundle.mono, cfg.tau_sky)
    ground = ground_mask(bundle, cfg.z_ground)

    keep = dist.keep & sky.keep & ground.keep
    prov = np.full((bundle.depth.height, bundle.depth.width), LABEL_KEPT, dtype=np.uint8)
    # First removing stage wins the provenance label.
    prov[~ground.keep] = LABEL_GROUND
    prov[~sky.keep] = LABEL_SKY
    prov[~dist.keep] = LABEL_FAR
    merged = SegMask(width=bundle.depth.width, height=bundle.depth.height,
                     keep=keep, provenance=np.where(keep, LABEL_KEPT, prov))

    if merged.n_kept == 0:
        raise EmptySegmentationError("all pixels removed before clustering",
                                     stage_counts=merged.stage_counts())
    final, _status = cluster_filter(bundle, merged, k=cfg.k,
                                    keep_policy=cfg.keep_policy, seed=cfg.seed)
    if final.n_kept == 0:
        raise EmptySegmentationError("cluster filter removed the last pixels",
                                     stage_counts=final.stage_counts())

    masked = np.where(final.keep, bundle.depth.depth, np.nan)
    fg_depth = DepthMap(width=bundle.depth.width, height=bundle.depth.height,
                        depth=masked, kind="metric")
    cloud = unproject(fg_depth, bundle.intr, bundle.pose)
    return final, cloud
