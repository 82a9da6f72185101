"""Tree skeleton graphs and the trait report they are measured into."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InputError
from .geom import _frozen


@dataclass(frozen=True)
class SkeletonGraph:
    """Node/edge skeleton of a tree.

    ``trunk_path`` is the ordered base-to-apex node chain; ``branch_roots``
    holds one trunk-node index per attached first-order branch.
    ``node_weights`` (extraction only) counts the cloud points supporting
    each node.
    """

    positions: np.ndarray
    radii: np.ndarray
    edges: np.ndarray
    trunk_path: np.ndarray
    branch_roots: np.ndarray
    node_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        r = np.array(self.radii, dtype=np.float64).reshape(-1)
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        tp = np.array(self.trunk_path, dtype=np.int64).reshape(-1)
        br = np.array(self.branch_roots, dtype=np.int64).reshape(-1)
        n = p.shape[0]
        if r.shape[0] != n:
            raise InputError("radii length must match node count")
        if np.any(r <= 0):
            raise InputError("node radii must be positive")
        if e.shape[0] != max(n - 1, 0):
            raise InputError("skeleton must satisfy |edges| = |nodes| - 1")
        if e.size and (e.min() < 0 or e.max() >= n):
            raise InputError("edge indices out of range")
        if tp.size == 0 or np.any(tp < 0) or np.any(tp >= n):
            raise InputError("trunk path must be a non-empty list of valid node indices")
        if len(set(tp.tolist())) != tp.size:
            raise InputError("trunk path must be a simple path")
        if br.size and (br.min() < 0 or br.max() >= n):
            raise InputError("branch root indices out of range")
        object.__setattr__(self, "positions", _frozen(p))
        object.__setattr__(self, "radii", _frozen(r))
        object.__setattr__(self, "edges", _frozen(e))
        object.__setattr__(self, "trunk_path", _frozen(tp))
        object.__setattr__(self, "branch_roots", _frozen(br))
        if self.node_weights is not None:
            w = np.array(self.node_weights, dtype=np.int64).reshape(-1)
            if w.shape[0] != n:
                raise InputError("node_weights length must match node count")
            object.__setattr__(self, "node_weights", _frozen(w))
        if n > 1 and not self.is_connected():
            raise InputError("skeleton graph must be connected")

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    def adjacency(self) -> csr_matrix:
        n = self.n_nodes
        if self.edges.size == 0:
            return csr_matrix((n, n))
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = np.linalg.norm(self.positions[i] - self.positions[j], axis=1)
        w = np.maximum(w, 1e-12)
        data = np.concatenate([w, w])
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        return csr_matrix((data, (rows, cols)), shape=(n, n))

    def is_connected(self) -> bool:
        n_comp, _ = connected_components(self.adjacency(), directed=False)
        return n_comp == 1

    def neighbor_lists(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for a, b in self.edges:
            nbrs[int(a)].append(int(b))
            nbrs[int(b)].append(int(a))
        return nbrs

    def edge_length(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.positions[a] - self.positions[b]))

    def to_dict(self) -> dict:
        d = {
            "nodes": [{"p": [float(x) for x in p], "r": float(r)}
                      for p, r in zip(self.positions, self.radii)],
            "edges": self.edges.tolist(),
            "trunk_path": self.trunk_path.tolist(),
            "branch_roots": self.branch_roots.tolist(),
        }
        if self.node_weights is not None:
            d["node_weights"] = self.node_weights.tolist()
        return d

    @staticmethod
    def from_dict(d: dict) -> "SkeletonGraph":
        nodes = d["nodes"]
        return SkeletonGraph(
            positions=np.array([n["p"] for n in nodes], dtype=float).reshape(-1, 3),
            radii=np.array([n["r"] for n in nodes], dtype=float),
            edges=np.array(d["edges"], dtype=np.int64).reshape(-1, 2),
            trunk_path=np.array(d["trunk_path"], dtype=np.int64),
            branch_roots=np.array(d.get("branch_roots", []), dtype=np.int64),
            node_weights=(np.array(d["node_weights"], dtype=np.int64)
                          if "node_weights" in d else None),
        )


@dataclass(frozen=True)
class TraitReport:
    """Phenotyping deliverable: trunk diameter (m), branch count, height (m).

    A ``None`` trait means it could not be measured from the geometry; report
    tables render that as "--".
    """

    trunk_diameter: Optional[float]
    branch_count: Optional[int]
    tree_height: Optional[float]
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trunk_diameter is not None and not self.trunk_diameter > 0:
            raise InputError("trunk_diameter must be positive when present")
        if self.branch_count is not None and self.branch_count < 0:
            raise InputError("branch_count must be non-negative")
        if self.tree_height is not None and not self.tree_height > 0:
            raise InputError("tree_height must be positive when present")

    def to_dict(self) -> dict:
        return {
            "trunk_diameter": self.trunk_diameter,
            "branch_count": self.branch_count,
            "tree_height": self.tree_height,
            "diagnostics": self.diagnostics,
        }

    @staticmethod
    def from_dict(d: dict) -> "TraitReport":
        return TraitReport(
            trunk_diameter=d.get("trunk_diameter"),
            branch_count=d.get("branch_count"),
            tree_height=d.get("tree_height"),
            diagnostics=d.get("diagnostics", {}),
        )
