import numpy as np
import pytest

from treebench.treegen import TreeParams, generate_tree, sample_surface


@pytest.fixture(scope="session")
def tree_model():
    return generate_tree(TreeParams(seed=42))


@pytest.fixture(scope="session")
def tree_cloud(tree_model):
    return sample_surface(tree_model.mesh, 20_000, seed=5)


def random_rotation(gen: np.random.Generator, max_angle_rad: float = np.pi) -> np.ndarray:
    """Uniform random axis, bounded angle, via Rodrigues."""
    axis = gen.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = gen.uniform(0.0, max_angle_rad)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def rotation_angle_deg(R: np.ndarray) -> float:
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def point_triangle_distance(p, a, b, c) -> float:
    """Exact closest-point distance from p to triangle abc."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(ap))
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(bp))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return float(np.linalg.norm(ap - v * ab))
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(cp))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return float(np.linalg.norm(ap - w * ac))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + w * (c - b))))
    denom = 1.0 / (va + vb + vc)
    v, w = vb * denom, vc * denom
    return float(np.linalg.norm(p - (a + ab * v + ac * w)))


def point_mesh_distances(points: np.ndarray, mesh, candidates: int = 60) -> np.ndarray:
    """Distance from each point to the mesh, pruned by triangle bounding boxes."""
    V, T = mesh.vertices, mesh.triangles
    A, B, C = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    lo = np.minimum(np.minimum(A, B), C)
    hi = np.maximum(np.maximum(A, B), C)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        dbox = np.linalg.norm(np.maximum(0.0, np.maximum(lo - p, p - hi)), axis=1)
        near = np.argsort(dbox)[:candidates]
        out[i] = min(point_triangle_distance(p, A[j], B[j], C[j]) for j in near)
    return out
