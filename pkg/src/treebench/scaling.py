"""Scale retrieval: resolve unitless reconstructions via the height ratio.

Reconstructions from single-image generative backends carry no metric
scale; the ratio of a sensor-measured reference height to the
reconstruction's own height gives the uniform factor that re-anchors it.
Height is used rather than trunk diameter because it is far less sensitive
to incomplete observations and noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InputError
from .geom import PointCloud
from .treegen import TriMesh

BASE_BAND_FRACTION = 0.01  # of the vertical span; scale-covariant band selection


@dataclass(frozen=True)
class ScaleResult:
    s: float
    h_ref: float
    h_rec: float

    def __post_init__(self):
        if not (self.s > 0):
            raise InputError("scale factor must be positive")
        if abs(self.s - self.h_ref / self.h_rec) > 1e-12 * max(self.s, 1.0):
            raise InputError("scale factor must equal h_ref / h_rec")

    def to_dict(self) -> dict:
        return {"s": self.s, "h_ref": self.h_ref, "h_rec": self.h_rec}


def scale_factor(h_ref: float, h_rec: float) -> ScaleResult:
    """s = reference height / reconstructed height."""
    if h_ref <= 0 or h_rec <= 0:
        raise InputError("heights must be positive")
    return ScaleResult(s=h_ref / h_rec, h_ref=float(h_ref), h_rec=float(h_rec))


def base_centroid(points: np.ndarray) -> np.ndarray:
    """Ground-contact anchor: centroid of the lowest height band, at minimum z.

    The band is a fixed fraction of the vertical span, so the same points are
    selected before and after any uniform scaling.
    """
    z = points[:, 2]
    band = points[z <= z.min() + BASE_BAND_FRACTION * max(z.max() - z.min(), 1e-12)]
    c = band.mean(axis=0)
    return np.array([c[0], c[1], z.min()])


def apply_scale(geometry: Union[PointCloud, TriMesh], s: float, center=None):
    """Uniformly scale about ``center`` (default: base centroid), same type out.

    Anchoring at the base keeps the ground contact fixed, so heights scale
    exactly by ``s``.
    """
    if s <= 0:
        raise InputError("scale factor must be positive")
    if isinstance(geometry, PointCloud):
        pts = geometry.points
        c = base_centroid(pts) if center is None else np.asarray(center, dtype=float)
        return PointCloud(c + s * (pts - c), geometry.colors)
    if isinstance(geometry, TriMesh):
        v = geometry.vertices
        c = base_centroid(v) if center is None else np.asarray(center, dtype=float)
        return TriMesh(c + s * (v - c), geometry.triangles)
    raise InputError(f"cannot scale a {type(geometry).__name__}")
