"""Geometric and trait-error metrics.

Chamfer distance is the symmetric mean nearest-neighbor Euclidean distance
(meters); a squared variant sits behind a flag for cross-benchmark
comparison.  The divergence between voxel-occupancy distributions uses the
natural log, so it is bounded by ln 2.  Clouds are expected to be aligned
(and scale-resolved) before either metric is computed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geom import NNIndex, PointCloud, voxel_indices

LN2 = float(np.log(2.0))

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeomMetrics:
    chamfer_l2: float
    jsd: float
    n_source: int
    n_target: int
    voxel_size: float

    def __post_init__(self):
        if self.chamfer_l2 < 0:
            raise InputError("chamfer distance cannot be negative")
        if not (0 <= self.jsd <= LN2 + 1e-12):
            raise InputError("divergence must lie in [0, ln 2]")

    def to_dict(self) -> dict:
        return {
            "chamfer_l2": self.chamfer_l2,
            "jsd": self.jsd,
            "n_source": self.n_source,
            "n_target": self.n_target,
            "voxel_size": self.voxel_size,
        }


@dataclass(frozen=True)
class ErrorStats:
    """MAE / MAPE aggregates with mean, population std, and 75th percentile."""

    mae_mean: float
    mae_std: float
    mae_p75: float
    mape_mean: float
    mape_std: float
    mape_p75: float
    n_items: int = 0
    n_mape_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "mae_mean": self.mae_mean,
            "mae_std": self.mae_std,
            "mae_p75": self.mae_p75,
            "mape_mean": self.mape_mean,
            "mape_std": self.mape_std,
            "mape_p75": self.mape_p75,
            "n_items": self.n_items,
            "n_mape_excluded": self.n_mape_excluded,
        }


def chamfer_l2(a: PointCloud, b: PointCloud, squared: bool = False) -> float:
    """Symmetric mean nearest-neighbor distance between two clouds (meters)."""
    if len(a) == 0 or len(b) == 0:
        raise InputError("chamfer distance needs two non-empty clouds")
    _, d_ab = NNIndex(b).nearest_many(a.points)
    _, d_ba = NNIndex(a).nearest_many(b.points)
    if squared:
        return 0.5 * (float(np.mean(d_ab ** 2)) + float(np.mean(d_ba ** 2)))
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def jsd(a: PointCloud, b: PointCloud, voxel_size: float = 0.05) -> float:
    """Divergence between the two clouds' voxel-occupancy distributions (nats).

    Both clouds are binned on a shared grid anchored at the union
    bounding-box minimum; counts are normalized to probabilities and
    0*log(0) is taken as 0.  Identical clouds give 0; disjoint supports
    give ln 2.
    """
    if len(a) == 0 or len(b) == 0:
        raise InputError("divergence needs two non-empty clouds")
    if voxel_size <= 0:
        raise InputError("voxel_size must be positive")
    origin = np.minimum(a.points.min(axis=0), b.points.min(axis=0))
    ia = voxel_indices(a.points, voxel_size, origin)
    ib = voxel_indices(b.points, voxel_size, origin)
    keys, inverse = np.unique(np.concatenate([ia, ib], axis=0), axis=0, return_inverse=True)
    counts_a = np.bincount(inverse[: len(ia)], minlength=len(keys)).astype(np.float64)
    counts_b = np.bincount(inverse[len(ia):], minlength=len(keys)).astype(np.float64)
    p = counts_a / counts_a.sum()
    q = counts_b / counts_b.sum()
    m = 0.5 * (p + q)
    kl_pm = float(np.sum(p[p > 0] * np.log(p[p > 0] / m[p > 0])))
    kl_qm = float(np.sum(q[q > 0] * np.log(q[q > 0] / m[q > 0])))
    return 0.5 * kl_pm + 0.5 * kl_qm


def geom_metrics(source: PointCloud, target: PointCloud, voxel_size: float = 0.05) -> GeomMetrics:
    return GeomMetrics(
        chamfer_l2=chamfer_l2(source, target),
        jsd=jsd(source, target, voxel_size),
        n_source=len(source),
        n_target=len(target),
        voxel_size=voxel_size,
    )


def error_stats(estimates, ground_truth) -> ErrorStats:
    """Per-item absolute and absolute-percentage errors, aggregated.

    Items with zero ground truth have no defined percentage error; they are
    excluded from the MAPE aggregates and counted in ``n_mape_excluded``.
    """
    est = np.asarray(estimates, dtype=np.float64).reshape(-1)
    gt = np.asarray(ground_truth, dtype=np.float64).reshape(-1)
    if est.shape != gt.shape or est.size == 0:
        raise InputError("estimates and ground truth must be equal-length and non-empty")
    abs_err = np.abs(est - gt)
    nonzero = gt != 0
    n_excluded = int((~nonzero).sum())
    if n_excluded:
        log.warning("MAPE undefined for %d item(s) with zero ground truth; excluded", n_excluded)
    if not nonzero.any():
        raise InputError("MAPE undefined: every ground-truth entry is zero")
    ape = np.abs(est[nonzero] - gt[nonzero]) / np.abs(gt[nonzero]) * 100.0
    return ErrorStats(
        mae_mean=float(abs_err.mean()),
        mae_std=float(abs_err.std()),
        mae_p75=float(np.percentile(abs_err, 75)),
        mape_mean=float(ape.mean()),
        mape_std=float(ape.std()),
        mape_p75=float(np.percentile(ape, 75)),
        n_items=int(est.size),
        n_mape_excluded=n_excluded,
    )


def throughput_ratio(baseline_seconds: float, method_seconds: float,
                     baseline_count: int = 1, method_count: int = 1) -> float:
    """Per-item speedup of the method over the baseline, from supplied timings."""
    if baseline_seconds <= 0 or method_seconds <= 0:
        raise InputError("timings must be positive")
    if baseline_count < 1 or method_count < 1:
        raise InputError("counts must be positive")
    return (baseline_seconds / baseline_count) / (method_seconds / method_count)
