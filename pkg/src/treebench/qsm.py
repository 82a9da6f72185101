"""Structural trait extraction from point clouds: height, trunk diameter, branches.

Skeletonization uses geodesic level sets over a k-NN graph: cluster each
graph-distance band into connected components, take centroids as nodes, and
parent each node on the connected cluster one band below.  This is
deterministic, parameter-light, and directly checkable against the
generator's exact ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .errors import InputError, SkeletonError, TraitUnavailable
from .geom import PointCloud
from .skeleton import SkeletonGraph, TraitReport


@dataclass(frozen=True)
class QsmParams:
    slice_thickness: float = 0.02
    measure_height: float = 0.30
    knn_k: int = 10
    level_step: float = 0.04
    min_branch_length: float = 0.05
    min_branch_points: int = 30
    circle_fit_max_rmse: float = 0.01

    def __post_init__(self):
        for name in ("slice_thickness", "measure_height", "knn_k", "level_step",
                     "min_branch_length", "min_branch_points", "circle_fit_max_rmse"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")

    def scaled(self, s: float) -> "QsmParams":
        """Parameters for a cloud uniformly scaled by ``s`` (counts unchanged)."""
        return QsmParams(
            slice_thickness=self.slice_thickness * s,
            measure_height=self.measure_height * s,
            knn_k=self.knn_k,
            level_step=self.level_step * s,
            min_branch_length=self.min_branch_length * s,
            min_branch_points=self.min_branch_points,
            circle_fit_max_rmse=self.circle_fit_max_rmse * s,
        )

    def to_dict(self) -> dict:
        return {
            "slice_thickness": self.slice_thickness,
            "measure_height": self.measure_height,
            "knn_k": self.knn_k,
            "level_step": self.level_step,
            "min_branch_length": self.min_branch_length,
            "min_branch_points": self.min_branch_points,
            "circle_fit_max_rmse": self.circle_fit_max_rmse,
        }

    @staticmethod
    def from_dict(d: dict) -> "QsmParams":
        return QsmParams(**d)


def remove_statistical_outliers(points: np.ndarray, k: int = 8) -> np.ndarray:
    """Drop points whose mean k-NN distance exceeds mean + 2 std over the cloud."""
    n = points.shape[0]
    kk = min(k + 1, n)
    d, _ = cKDTree(points).query(points, k=kk, workers=-1)
    mean_d = d[:, 1:].mean(axis=1)
    keep = mean_d <= mean_d.mean() + 2.0 * mean_d.std()
    return points[keep]


def tree_height(cloud: PointCloud, p_lo: float = 1.0, p_hi: float = 99.0) -> float:
    """Robust vertical span: z-percentile range after statistical outlier removal."""
    if len(cloud) < 10:
        raise InputError("tree_height needs at least 10 points")
    pts = remove_statistical_outliers(cloud.points)
    z = pts[:, 2]
    return float(np.percentile(z, p_hi) - np.percentile(z, p_lo))


def _knn_graph(points: np.ndarray, k: int) -> csr_matrix:
    n = points.shape[0]
    kk = min(k + 1, n)
    d, j = cKDTree(points).query(points, k=kk, workers=-1)
    rows = np.repeat(np.arange(n), kk - 1)
    cols = j[:, 1:].ravel()
    vals = np.maximum(d[:, 1:].ravel(), 1e-12)
    g = csr_matrix((vals, (rows, cols)), shape=(n, n))
    return g.maximum(g.T)


MINOR_COMPONENT_FRACTION = 0.10   # bridgeable sampling-gap fragments, in total


def _bridge_minor_components(points: np.ndarray, graph: csr_matrix) -> csr_matrix:
    """Reconnect small sampling-gap fragments to the dominant component.

    Thin, sparsely sampled laterals occasionally open a gap wider than the k-NN
    radius; each minor fragment is re-attached through its nearest main-body
    point.  Raises SkeletonError when the split is substantial.
    """
    n_comp, comp = connected_components(graph, directed=False)
    if n_comp == 1:
        return graph
    sizes = np.bincount(comp)
    main = int(np.argmax(sizes))
    if sizes.sum() - sizes[main] > MINOR_COMPONENT_FRACTION * sizes.sum():
        raise SkeletonError(
            f"k-NN graph splits into {n_comp} components",
            component_sizes=sorted(sizes.tolist(), reverse=True),
        )
    main_idx = np.nonzero(comp == main)[0]
    tree = cKDTree(points[main_idx])
    rows, cols, vals = [], [], []
    for c in range(n_comp):
        if c == main:
            continue
        idx = np.nonzero(comp == c)[0]
        d, j = tree.query(points[idx], k=1, workers=-1)
        best = int(np.argmin(d))
        a, b = int(idx[best]), int(main_idx[j[best]])
        rows += [a, b]
        cols += [b, a]
        vals += [max(float(d[best]), 1e-12)] * 2
    extra = csr_matrix((vals, (rows, cols)), shape=graph.shape)
    return graph.maximum(extra)


DEBRIS_WEIGHT_FACTOR = 0.25   # of the mean cluster weight; smaller nodes merge up


def extract_skeleton(cloud: PointCloud, params: Optional[QsmParams] = None) -> SkeletonGraph:
    """Geodesic level-set skeleton of a tree cloud.

    Raises SkeletonError (listing component sizes) when the k-NN graph is
    substantially disconnected, since graph distances from the root are then
    undefined for part of the cloud.
    """
    params = params or QsmParams()
    if len(cloud) < 100:
        raise InputError("extract_skeleton needs at least 100 points")
    pts = cloud.points

    graph = _knn_graph(pts, params.knn_k)
    graph = _bridge_minor_components(pts, graph)

    # Root region: the lowest band of the cloud, with its density peak
    # identifying the root node.  Geodesic distance is measured from the
    # whole band (virtual source), so level sets form closed rings instead
    # of spiral fronts seeded at one surface point.
    z = pts[:, 2]
    base_band = z <= z.min() + params.level_step
    base_centroid = pts[base_band].mean(axis=0)
    root = int(np.argmin(np.sum((pts - base_centroid) ** 2, axis=1) + np.where(base_band, 0, np.inf)))

    n_pts = pts.shape[0]
    band_idx = np.nonzero(base_band)[0]
    coo_g = graph.tocoo()
    rows = np.concatenate([coo_g.row, np.full(band_idx.size, n_pts), band_idx])
    cols = np.concatenate([coo_g.col, band_idx, np.full(band_idx.size, n_pts)])
    vals = np.concatenate([coo_g.data, np.full(2 * band_idx.size, 1e-9)])
    lifted = csr_matrix((vals, (rows, cols)), shape=(n_pts + 1, n_pts + 1))
    dist = dijkstra(lifted, directed=False, indices=n_pts)[:n_pts]
    levels = np.floor(dist / params.level_step).astype(np.int64)

    node_pos: list[np.ndarray] = []
    node_rad: list[float] = []
    node_weight: list[int] = []
    node_level: list[int] = []
    parent_of: dict[int, int] = {}
    level_nodes: dict[int, list[int]] = {}
    point_node = np.full(pts.shape[0], -1, dtype=np.int64)

    order = np.argsort(levels, kind="stable")
    sorted_levels = levels[order]
    boundaries = np.searchsorted(sorted_levels, np.arange(sorted_levels[-1] + 2))
    root_node = None
    for lev in range(int(sorted_levels[-1]) + 1):
        members = order[boundaries[lev]:boundaries[lev + 1]]
        if members.size == 0:
            continue
        sub = graph[members][:, members]
        n_sub, lab = connected_components(sub, directed=False)
        for c in range(n_sub):
            cluster = members[lab == c]
            centroid = pts[cluster].mean(axis=0)
            spread = float(np.sqrt(np.mean(np.sum((pts[cluster] - centroid) ** 2, axis=1))))
            node_id = len(node_pos)
            node_pos.append(centroid)
            node_rad.append(max(spread, 1e-4))
            node_weight.append(int(cluster.size))
            node_level.append(lev)
            point_node[cluster] = node_id
            if lev == 0 and root_node is None and root in set(cluster.tolist()):
                root_node = node_id
            level_nodes.setdefault(lev, []).append(node_id)

    if root_node is None:
        root_node = 0
    n_raw = len(node_pos)
    node_pos_arr = np.asarray(node_pos)
    node_level_arr = np.asarray(node_level)

    # Parenting is connectivity-aware: a node's parent must be a lower-level
    # cluster it shares k-NN edges with (strongest link wins), otherwise two
    # parallel chains running close together swap parents level by level.
    coo = graph.tocoo()
    ni, nj = point_node[coo.row], point_node[coo.col]
    li, lj = node_level_arr[ni], node_level_arr[nj]
    child_side = li > lj
    pairs = np.stack([ni[child_side], nj[child_side]], axis=1)
    link_counts: dict[int, dict[int, int]] = {}
    if pairs.size:
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        for (c, p), cnt in zip(uniq, counts):
            link_counts.setdefault(int(c), {})[int(p)] = int(cnt)

    for node_id in range(n_raw):
        if node_id == root_node:
            continue
        lev = node_level[node_id]
        parent = None
        linked = link_counts.get(node_id)
        if linked:
            best_level = max(node_level[p] for p in linked)
            cands = [p for p in linked if node_level[p] == best_level]
            d2 = [float(np.sum((node_pos_arr[p] - node_pos_arr[node_id]) ** 2)) for p in cands]
            parent = int(cands[int(np.lexsort((d2, [-linked[p] for p in cands]))[0])])
        if parent is None:
            for back in range(lev - 1, -1, -1):
                cands_l = level_nodes.get(back)
                if cands_l:
                    cand_arr = np.asarray(cands_l)
                    d2 = np.sum((node_pos_arr[cand_arr] - node_pos_arr[node_id]) ** 2, axis=1)
                    parent = int(cand_arr[np.argmin(d2)])
                    break
        if parent is None:
            parent = root_node  # stray level-0 cluster
        parent_of[node_id] = parent

    # Level-bin quantization sheds tiny point pockets that would otherwise
    # become spurious stub nodes; fold anything well below the mean cluster
    # weight back into its parent.
    threshold = max(2.0, DEBRIS_WEIGHT_FACTOR * pts.shape[0] / n_raw)
    absorbed = [w < threshold and i != root_node for i, w in enumerate(node_weight)]

    def effective(i: int) -> int:
        while absorbed[i]:
            i = parent_of[i]
        return i

    weight_final = list(node_weight)
    for i in range(n_raw):
        if absorbed[i]:
            weight_final[effective(i)] += node_weight[i]

    keep_ids = [i for i in range(n_raw) if not absorbed[i]]
    remap = {old: new for new, old in enumerate(keep_ids)}
    edges = []
    new_parent: dict[int, int] = {}
    for old in keep_ids:
        if old == root_node:
            continue
        p = effective(parent_of[old])
        edges.append((remap[p], remap[old]))
        new_parent[remap[old]] = remap[p]
    root_new = remap[root_node]

    positions = node_pos_arr[keep_ids]
    radii = np.asarray(node_rad)[keep_ids]
    weights = np.asarray(weight_final, dtype=np.int64)[keep_ids]

    # Trunk: root-to-leaf path maximizing total radius (depth-weighted, so the
    # apex-reaching chain beats short fat stubs); ties go to the higher apex.
    children: dict[int, list[int]] = {}
    for p, c in edges:
        children.setdefault(p, []).append(c)
    leaves = [i for i in range(len(keep_ids)) if i not in children]
    best_path, best_key = [root_new], None
    for leaf in leaves:
        path = [leaf]
        while path[-1] != root_new:
            path.append(new_parent[path[-1]])
        path.reverse()
        key = (sum(radii[i] for i in path), positions[leaf][2])
        if best_key is None or key > best_key:
            best_key, best_path = key, path
    trunk_path = np.asarray(best_path, dtype=np.int64)

    skeleton = SkeletonGraph(
        positions=positions,
        radii=radii,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        trunk_path=trunk_path,
        branch_roots=np.empty(0, dtype=np.int64),
        node_weights=weights,
    )
    roots = _qualifying_branch_roots(skeleton, params)
    return SkeletonGraph(
        positions=skeleton.positions,
        radii=skeleton.radii,
        edges=skeleton.edges,
        trunk_path=skeleton.trunk_path,
        branch_roots=np.asarray(roots, dtype=np.int64),
        node_weights=skeleton.node_weights,
    )


def _qualifying_branch_roots(skeleton: SkeletonGraph, params: QsmParams) -> list[int]:
    """One trunk-node index per qualifying first-order branch.

    Each off-trunk subtree at a trunk node of degree >= 3 must reach the
    length and support thresholds; within it, every leaf chain running at
    least ``min_branch_length`` beyond the trunk counts as one lateral
    (laterals attached at nearby heights leave the trunk through a shared
    junction cluster before separating).
    """
    trunk = set(skeleton.trunk_path.tolist())
    nbrs = skeleton.neighbor_lists()
    roots: list[int] = []
    for t in skeleton.trunk_path:
        t = int(t)
        if len(nbrs[t]) < 3:
            continue
        for child in nbrs[t]:
            if child in trunk:
                continue
            depths, weight = _subtree_leaf_depths(skeleton, nbrs, start=child, avoid=t)
            if skeleton.node_weights is not None and weight < params.min_branch_points:
                continue
            n_laterals = sum(1 for d in depths if d >= params.min_branch_length)
            roots.extend([t] * n_laterals)
    return roots


def _subtree_leaf_depths(skeleton: SkeletonGraph, nbrs, start: int, avoid: int) -> tuple[list[float], int]:
    """Geodesic depth of every leaf in a subtree, plus its total point weight."""
    weights = skeleton.node_weights
    total = 0
    depths: list[float] = []
    stack = [(start, avoid, skeleton.edge_length(avoid, start))]
    while stack:
        node, parent, acc = stack.pop()
        total += int(weights[node]) if weights is not None else 0
        onward = [n for n in nbrs[node] if n != parent]
        if not onward:
            depths.append(acc)
        for nxt in onward:
            stack.append((nxt, node, acc + skeleton.edge_length(node, nxt)))
    return depths, total


def count_branches(skeleton: SkeletonGraph, params: Optional[QsmParams] = None) -> int:
    """First-order laterals: deep leaf chains of the off-trunk subtrees hanging
    from trunk nodes of degree >= 3 (see _qualifying_branch_roots)."""
    params = params or QsmParams()
    return len(_qualifying_branch_roots(skeleton, params))


# --- trunk diameter -----------------------------------------------------------

def _fit_circle(xy: np.ndarray) -> tuple[float, float, float, float]:
    """Algebraic circle fit plus one Gauss-Newton refinement.

    Returns (cx, cy, r, rmse of radial residuals).
    """
    x, y = xy[:, 0], xy[:, 1]
    A = np.stack([2 * x, 2 * y, np.ones_like(x)], axis=1)
    b = x ** 2 + y ** 2
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = sol[0], sol[1]
    r2 = sol[2] + cx ** 2 + cy ** 2
    if not (np.isfinite(r2) and r2 > 0):
        return np.nan, np.nan, np.nan, np.inf
    r = float(np.sqrt(r2))

    # One geometric refinement step keeps the fit honest on partial arcs.
    rho = np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
    ok = rho > 1e-12
    if ok.sum() >= 3:
        J = np.stack([-(x[ok] - cx) / rho[ok], -(y[ok] - cy) / rho[ok], -np.ones(ok.sum())], axis=1)
        res = rho[ok] - r
        try:
            step, *_ = np.linalg.lstsq(J, -res, rcond=None)
            cx2, cy2, r2n = cx + step[0], cy + step[1], r + step[2]
            if np.isfinite([cx2, cy2, r2n]).all() and r2n > 0:
                rho2 = np.sqrt((x - cx2) ** 2 + (y - cy2) ** 2)
                if np.sqrt(np.mean((rho2 - r2n) ** 2)) <= np.sqrt(np.mean((rho - r) ** 2)):
                    cx, cy, r, rho = cx2, cy2, float(r2n), rho2
        except np.linalg.LinAlgError:
            pass
    rmse = float(np.sqrt(np.mean((rho - r) ** 2)))
    return float(cx), float(cy), float(r), rmse


def _trunk_point_at(skeleton: SkeletonGraph, arc_height: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Center, unit tangent, and local radius at ``arc_height`` along the trunk path."""
    path = skeleton.trunk_path
    pos = skeleton.positions[path]
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if not (0 <= arc_height <= cum[-1]):
        raise TraitUnavailable(
            f"measure height {arc_height:.3f} m lies beyond the trunk path ({cum[-1]:.3f} m)",
            diagnostics={"trunk_length": float(cum[-1])},
        )
    i = int(np.clip(np.searchsorted(cum, arc_height) - 1, 0, len(seg) - 1))
    t = (arc_height - cum[i]) / max(seg[i], 1e-12)
    center = pos[i] + t * (pos[i + 1] - pos[i])
    tangent = (pos[i + 1] - pos[i]) / max(seg[i], 1e-12)
    radius = float((1 - t) * skeleton.radii[path[i]] + t * skeleton.radii[path[i + 1]])
    return center, tangent, radius


def trunk_diameter(cloud: PointCloud, skeleton: SkeletonGraph,
                   params: Optional[QsmParams] = None) -> float:
    """Least-squares circle diameter of the trunk slice at the measure height.

    Raises TraitUnavailable when the slice is degenerate or the fit residual
    exceeds ``circle_fit_max_rmse`` (too noisy for a circular cross-section).
    """
    params = params or QsmParams()
    center, tangent, local_r = _trunk_point_at(skeleton, params.measure_height)

    rel = cloud.points - center
    axial = rel @ tangent
    radial = np.linalg.norm(rel - np.outer(axial, tangent), axis=1)
    in_slice = (np.abs(axial) <= params.slice_thickness / 2) & (radial <= 3.0 * local_r)
    slice_pts = cloud.points[in_slice]
    if slice_pts.shape[0] < 3:
        raise TraitUnavailable(
            f"trunk slice holds only {slice_pts.shape[0]} points",
            diagnostics={"slice_points": int(slice_pts.shape[0])},
        )

    ref = np.array([0.0, 0.0, 1.0]) if abs(tangent[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(tangent, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(tangent, e1)
    rel_slice = slice_pts - center
    xy = np.stack([rel_slice @ e1, rel_slice @ e2], axis=1)
    cx, cy, r, rmse = _fit_circle(xy)
    if not np.isfinite(r) or r <= 0 or rmse > params.circle_fit_max_rmse:
        raise TraitUnavailable(
            f"circle fit rejected (rmse {rmse:.4f} m > {params.circle_fit_max_rmse} m)",
            diagnostics={"rmse": rmse, "slice_points": int(slice_pts.shape[0]), "radius": r},
        )
    return 2.0 * r


def extract_traits(cloud: PointCloud, params: Optional[QsmParams] = None) -> TraitReport:
    """Full trait report for one cloud; unavailable traits come back as None.

    When the trunk cross-section fit is rejected the geometry has violated
    the structural assumptions, so the whole report (diameter and count)
    is marked unavailable, exactly like noisy sensor clouds in the field.
    """
    params = params or QsmParams()
    if len(cloud) < 100:
        raise InputError("trait extraction needs at least 100 points")
    height = tree_height(cloud)
    diagnostics: dict = {"n_points": len(cloud)}

    try:
        skeleton = extract_skeleton(cloud, params)
        diagnostics["skeleton_nodes"] = skeleton.n_nodes
    except SkeletonError as e:
        diagnostics["skeleton_error"] = str(e)
        diagnostics["component_sizes"] = e.component_sizes[:8]
        return TraitReport(trunk_diameter=None, branch_count=None,
                           tree_height=height, diagnostics=diagnostics)

    branch_count = count_branches(skeleton, params)
    try:
        diameter = trunk_diameter(cloud, skeleton, params)
        diagnostics["trunk_fit"] = "ok"
    except TraitUnavailable as e:
        diagnostics["trunk_fit"] = str(e)
        diagnostics.update({f"trunk_{k}": v for k, v in e.diagnostics.items()})
        return TraitReport(trunk_diameter=None, branch_count=None,
                           tree_height=height, diagnostics=diagnostics)
    return TraitReport(trunk_diameter=diameter, branch_count=branch_count,
                       tree_height=height, diagnostics=diagnostics)
