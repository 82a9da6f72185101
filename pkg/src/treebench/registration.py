"""Rigid point-to-point ICP for aligning reconstructions with references.

The update step is the closed-form cross-covariance SVD solution; the stop
rule is the change in correspondence RMS between successive iterations.
Initialization (when none is given) aligns centroids and principal axes,
which makes pose-free field alignment feasible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError, RegistrationError
from .geom import NNIndex, PointCloud, _RigidMotion, downsample

DEFAULT_ICP_VOXEL = 0.005   # both clouds are thinned to 5 mm before ICP
CORR_DIST_SPACING_FACTOR = 10.0


class RigidTransform(_RigidMotion):
    """Rigid map p -> R p + t between two metric frames."""


@dataclass(frozen=True)
class IcpParams:
    max_iter: int = 200
    rms_delta: float = 1e-7
    max_corr_dist: Optional[float] = None   # default: 10x target median NN spacing
    init: Optional[RigidTransform] = None   # default: centroid + principal axes
    downsample_voxel: Optional[float] = DEFAULT_ICP_VOXEL

    def __post_init__(self):
        if self.max_iter < 1:
            raise InputError("max_iter must be at least 1")
        if self.rms_delta <= 0:
            raise InputError("rms_delta must be positive")
        if self.max_corr_dist is not None and self.max_corr_dist <= 0:
            raise InputError("max_corr_dist must be positive")
        if self.downsample_voxel is not None and self.downsample_voxel <= 0:
            raise InputError("downsample_voxel must be positive")


@dataclass(frozen=True)
class IcpReport:
    transform: RigidTransform
    rms_history: tuple
    iterations: int
    converged: bool
    inlier_fraction: float

    @property
    def final_rms(self) -> float:
        return self.rms_history[-1]

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "rms_history": list(self.rms_history),
            "iterations": self.iterations,
            "converged": self.converged,
            "inlier_fraction": self.inlier_fraction,
        }


def apply_transform(cloud: PointCloud, T: RigidTransform) -> PointCloud:
    """p -> R p + t for every point, order preserved."""
    return PointCloud(T.apply(cloud.points), cloud.colors)


def _kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid motion src -> dst via cross-covariance SVD."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= 1e-12 * max(S[0], 1e-300):
        raise RegistrationError(
            "rank-deficient correspondence covariance",
            diagnostics={"singular_values": S.tolist(), "n_correspondences": int(src.shape[0])},
        )
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    # Re-project onto SO(3) so accumulated float drift never leaves the group.
    Ru, _, Rvt = np.linalg.svd(R)
    R = Ru @ np.diag([1.0, 1.0, np.sign(np.linalg.det(Ru @ Rvt))]) @ Rvt
    return RigidTransform(rotation=R, translation=cd - R @ cs)


def _principal_axes(points: np.ndarray) -> np.ndarray:
    """Covariance eigenvectors as columns, major axis first, up-ish and right-handed."""
    c = points.mean(axis=0)
    cov = (points - c).T @ (points - c) / points.shape[0]
    w, v = np.linalg.eigh(cov)
    v = v[:, ::-1]  # descending eigenvalue order
    if v[2, 0] < 0:  # orient the major axis upward (trees are vertical)
        v[:, 0] = -v[:, 0]
    v[:, 2] = np.cross(v[:, 0], v[:, 1])
    return v


def _initial_candidates(src: np.ndarray, dst: np.ndarray) -> list[RigidTransform]:
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    vs = _principal_axes(src)
    vd = _principal_axes(dst)
    cands = [RigidTransform.identity(),
             RigidTransform(rotation=np.eye(3), translation=cd - cs)]
    for flip in (np.diag([1.0, 1.0, 1.0]), np.diag([1.0, -1.0, -1.0])):
        R = vd @ flip @ vs.T
        Ru, _, Rvt = np.linalg.svd(R)
        R = Ru @ np.diag([1.0, 1.0, np.sign(np.linalg.det(Ru @ Rvt))]) @ Rvt
        cands.append(RigidTransform(rotation=R, translation=cd - R @ cs))
    return cands


def _check_noncollinear(points: np.ndarray, name: str) -> None:
    if points.shape[0] < 3:
        raise InputError(f"{name} cloud needs at least 3 points")
    c = points.mean(axis=0)
    s = np.linalg.svd((points - c), compute_uv=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise InputError(f"{name} cloud is collinear")


def icp_align(source: PointCloud, target: PointCloud,
              params: Optional[IcpParams] = None) -> IcpReport:
    """Estimate the rigid transform mapping ``source`` into the target frame.

    Iterates nearest-neighbor correspondences (rejected beyond
    ``max_corr_dist``) with closed-form SVD updates until the RMS change
    between iterations drops below ``rms_delta`` or ``max_iter`` is hit.
    RMS is reported on the (optionally voxel-thinned) clouds.
    """
    params = params or IcpParams()
    if params.downsample_voxel is not None:
        source = downsample(source, params.downsample_voxel)
        target = downsample(target, params.downsample_voxel)
    src = source.points
    dst = target.points
    _check_noncollinear(src, "source")
    _check_noncollinear(dst, "target")

    index = NNIndex(target)
    max_corr = params.max_corr_dist
    if max_corr is None:
        spacing = index.median_spacing()
        max_corr = CORR_DIST_SPACING_FACTOR * spacing if spacing > 0 else np.inf

    def correspondence_rms(T: RigidTransform) -> float:
        moved = T.apply(src)
        _, d = index.nearest_many(moved)
        acc = d <= max_corr
        if acc.sum() < 3:
            return np.inf
        return float(np.sqrt(np.mean(d[acc] ** 2)))

    if params.init is not None:
        T = params.init
    else:
        cands = _initial_candidates(src, dst)
        T = min(cands, key=correspondence_rms)

    rms_history: list[float] = []
    converged = False
    inlier_fraction = 0.0
    for _ in range(params.max_iter):
        moved = T.apply(src)
        idx, d = index.nearest_many(moved)
        accepted = d <= max_corr
        n_acc = int(accepted.sum())
        inlier_fraction = n_acc / src.shape[0]
        if n_acc < 3:
            raise RegistrationError(
                "fewer than 3 correspondences inside max_corr_dist",
                diagnostics={"max_corr_dist": float(max_corr), "accepted": n_acc,
                             "rms_history": rms_history},
            )
        pre_rms = float(np.sqrt(np.mean(d[accepted] ** 2)))
        if pre_rms == 0.0:
            # Exact fixed point; an SVD update would only add float noise.
            rms_history.append(0.0)
            if len(rms_history) >= 2:
                converged = True
                break
            continue
        update = _kabsch(moved[accepted], dst[idx[accepted]])
        T = update.compose(T)
        res = update.apply(moved[accepted]) - dst[idx[accepted]]
        rms = float(np.sqrt(np.mean(np.sum(res ** 2, axis=1))))
        rms_history.append(rms)
        if len(rms_history) >= 2 and abs(rms_history[-1] - rms_history[-2]) < params.rms_delta:
            converged = True
            break

    return IcpReport(
        transform=RigidTransform(rotation=T.rotation, translation=T.translation),
        rms_history=tuple(rms_history),
        iterations=len(rms_history),
        converged=converged,
        inlier_fraction=float(inlier_fraction),
    )


def crop_box(cloud: PointCloud, lo, hi) -> PointCloud:
    """Axis-aligned crop used for local re-registration of detail views."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    keep = np.all((cloud.points >= lo) & (cloud.points <= hi), axis=1)
    if not keep.any():
        raise InputError("crop box removes every point")
    colors = cloud.colors[keep] if cloud.colors is not None else None
    return PointCloud(cloud.points[keep], colors)
