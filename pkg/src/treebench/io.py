"""File formats: binary PLY clouds, 16-bit PNG depth, OBJ meshes, JSON poses.

Writers are byte-deterministic for identical inputs, which the pipeline
relies on for reproducibility checks.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IngestError, InputError
from .geom import CameraIntrinsics, DepthMap, PointCloud, Pose


# --- PLY (binary little-endian; float32 xyz, optional uint8 rgb) ------------

def save_ply(path, cloud: PointCloud) -> None:
    path = Path(path)
    n = len(cloud)
    has_color = cloud.colors is not None
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += ["property float x", "property float y", "property float z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += ["end_header", ""]
    if has_color:
        rec = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                        ("red", "u1"), ("green", "u1"), ("blue", "u1")])
        data = np.empty(n, dtype=rec)
        data["x"], data["y"], data["z"] = cloud.points.astype(np.float32).T
        rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        data["red"], data["green"], data["blue"] = rgb.T
    else:
        rec = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
        data = np.empty(n, dtype=rec)
        data["x"], data["y"], data["z"] = cloud.points.astype(np.float32).T
    with open(path, "wb") as f:
        f.write("\n".join(header).encode("ascii"))
        f.write(data.tobytes())


def load_ply(path) -> PointCloud:
    """Read a PLY cloud (binary little-endian or ascii, xyz [+rgb])."""
    path = Path(path)
    raw = path.read_bytes()
    end = raw.find(b"end_header")
    if end < 0:
        raise IngestError(f"{path}: missing PLY header terminator", location=str(path))
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end:]
    body = body[body.find(b"\n") + 1:]

    fmt = None
    n = 0
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header_lines:
        tok = line.strip().split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append((tok[1], tok[2]))

    if fmt not in ("binary_little_endian", "ascii"):
        raise IngestError(f"{path}: unsupported PLY format {fmt!r}", location=str(path))
    type_map = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
                "uchar": "u1", "uint8": "u1", "int": "<i4", "int32": "<i4"}
    try:
        rec = np.dtype([(name, type_map[t]) for t, name in props])
    except KeyError as e:
        raise IngestError(f"{path}: unsupported PLY property type {e}", location=str(path))

    if fmt == "binary_little_endian":
        need = rec.itemsize * n
        if len(body) < need:
            raise IngestError(f"{path}: truncated PLY body", location=str(path))
        data = np.frombuffer(body[:need], dtype=rec)
    else:
        rows = body.decode("ascii").split()
        vals = np.array(rows, dtype=np.float64).reshape(n, len(props))
        data = np.core.records.fromarrays(vals.T, dtype=rec) if n else np.empty(0, dtype=rec)

    names = [name for _, name in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise IngestError(f"{path}: PLY misses vertex property {axis!r}", location=str(path))
    pts = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        first = int(np.nonzero(bad)[0][0])
        raise IngestError(f"{path}: non-finite vertex at record {first}", location=f"{path}:vertex {first}")
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.float64) / 255.0
    return PointCloud(pts, colors)


# --- depth / mono PNG (16-bit grayscale) -------------------------------------

def save_depth_png(path, depth: DepthMap) -> None:
    """Metric depth as 16-bit PNG in millimeters; 0 encodes invalid."""
    if depth.kind != "metric":
        raise InputError("save_depth_png expects a metric depth map")
    mm = np.zeros((depth.height, depth.width), dtype=np.uint16)
    valid = depth.valid_mask()
    mm[valid] = np.clip(np.round(depth.depth[valid] * 1000.0), 1, 65535).astype(np.uint16)
    Image.fromarray(mm).save(Path(path))


def load_depth_png(path) -> DepthMap:
    arr = np.asarray(Image.open(Path(path)), dtype=np.uint16)
    d = arr.astype(np.float64) / 1000.0
    d[arr == 0] = np.nan
    return DepthMap(width=arr.shape[1], height=arr.shape[0], depth=d, kind="metric")


def save_mono_png(path, mono: DepthMap) -> None:
    """Relative inverse depth in [0,1] as 16-bit PNG; 0 stays the sky code."""
    if mono.kind != "relative":
        raise InputError("save_mono_png expects a relative depth map")
    scaled = np.clip(np.round(mono.depth * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(scaled).save(Path(path))


def load_mono_png(path) -> DepthMap:
    arr = np.asarray(Image.open(Path(path)), dtype=np.uint16)
    return DepthMap(width=arr.shape[1], height=arr.shape[0],
                    depth=arr.astype(np.float64) / 65535.0, kind="relative")


# --- JSON sidecars ------------------------------------------------------------

def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_pose_json(path, pose: Pose) -> None:
    write_json(path, pose.to_dict())


def load_pose_json(path) -> Pose:
    return Pose.from_dict(read_json(path))


def save_trajectory_json(path, poses) -> None:
    Path(path).write_text(
        json.dumps([p.to_dict() for p in poses], indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def load_trajectory_json(path) -> list:
    return [Pose.from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


def save_intrinsics_json(path, intr: CameraIntrinsics) -> None:
    write_json(path, intr.to_dict())


def load_intrinsics_json(path) -> CameraIntrinsics:
    return CameraIntrinsics.from_dict(read_json(path))


# --- OBJ meshes ----------------------------------------------------------------

def save_obj(path, mesh) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_obj(path):
    """Read vertices and (fan-triangulated) faces from a Wavefront OBJ."""
    from .treegen import TriMesh  # local import to avoid a cycle

    path = Path(path)
    verts: list[list[float]] = []
    tris: list[list[int]] = []
    for ln, line in enumerate(path.read_text(encoding="utf-8", errors="replace").splitlines(), start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            try:
                verts.append([float(x) for x in tok[1:4]])
            except ValueError:
                raise IngestError(f"{path}: bad vertex at line {ln}", location=f"{path}:{ln}")
        elif tok[0] == "f":
            idx = []
            for part in tok[1:]:
                s = part.split("/")[0]
                try:
                    i = int(s)
                except ValueError:
                    raise IngestError(f"{path}: bad face at line {ln}", location=f"{path}:{ln}")
                idx.append(i - 1 if i > 0 else len(verts) + i)
            for k in range(1, len(idx) - 1):
                tris.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise IngestError(f"{path}: no vertices", location=str(path))
    v = np.asarray(verts, dtype=np.float64)
    if not np.isfinite(v).all():
        first = int(np.nonzero(~np.isfinite(v).all(axis=1))[0][0])
        raise IngestError(f"{path}: non-finite vertex at record {first}", location=f"{path}:vertex {first}")
    return TriMesh(vertices=v, triangles=np.asarray(tris, dtype=np.int64).reshape(-1, 3))


# --- masks ----------------------------------------------------------------------

_PROVENANCE_PALETTE = [
    (40, 40, 40),      # far
    (90, 160, 255),    # sky
    (150, 100, 40),    # ground
    (230, 80, 80),     # cluster
    (60, 200, 60),     # kept
]


def save_mask_png(path, keep: np.ndarray) -> None:
    """8-bit mask PNG: 255 = keep, 0 = removed."""
    Image.fromarray(np.where(keep, 255, 0).astype(np.uint8), mode="L").save(Path(path))


def load_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(Path(path)), dtype=np.uint8)
    return arr >= 128


def save_provenance_png(path, provenance: np.ndarray) -> None:
    img = Image.fromarray(provenance.astype(np.uint8), mode="P")
    palette = []
    for rgb in _PROVENANCE_PALETTE:
        palette.extend(rgb)
    palette.extend([0, 0, 0] * (256 - len(_PROVENANCE_PALETTE)))
    img.putpalette(palette)
    img.save(Path(path))


def load_provenance_png(path) -> np.ndarray:
    return np.asarray(Image.open(Path(path)), dtype=np.uint8)
