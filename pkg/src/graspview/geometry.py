"""Rigid transforms, point clouds, triangle meshes and local surface frames."""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from graspview.errors import (
    DegenerateNeighborhood,
    EmptyMesh,
    InsufficientNeighbors,
    NotWatertight,
)

ORTHO_TOL = 1e-9
DEFAULT_FRAME_RADIUS = 0.01
MIN_FRAME_NEIGHBORS = 8


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    v.setflags(write=False)
    return v


def _reorthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> rotation @ x + translation`` (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> Pose:
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> Pose:
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return cls(Rotation.from_rotvec(axis * angle).as_matrix(), translation)

    @classmethod
    def random(cls, rng: np.random.Generator, max_translation: float = 1.0) -> Pose:
        r = Rotation.random(random_state=rng).as_matrix()
        t = rng.uniform(-max_translation, max_translation, size=3)
        return cls(_reorthonormalize(r), t)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_row12(self) -> list[float]:
        """Row-major rotation followed by translation."""
        return [float(v) for v in self.rotation.reshape(-1)] + [float(v) for v in self.translation]

    @classmethod
    def from_row12(cls, values) -> Pose:
        values = np.asarray(values, dtype=float)
        return cls(values[:9].reshape(3, 3), values[9:12])

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def compose(a: Pose, b: Pose) -> Pose:
    """Pose that applies ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    if np.abs(r.T @ r - np.eye(3)).max() > 1e-12:
        r = _reorthonormalize(r)
    return Pose(r, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def transform_point(p: Pose, x) -> np.ndarray:
    return p.rotation @ np.asarray(x, dtype=float) + p.translation


def transform_points(p: Pose, xs) -> np.ndarray:
    """Vectorised ``transform_point`` over an ``(N, 3)`` array."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 3)
    return xs @ p.rotation.T + p.translation


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None
    view_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "view_origin", _as_vec3(self.view_origin))
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=float).reshape(-1, 3)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points")
            if len(nrm):
                if np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max() > 1e-6:
                    raise ValueError("normals must have unit length")
                facing = np.einsum("ij,ij->i", nrm, self.view_origin - pts)
                if facing.min() < -1e-9:
                    raise ValueError("normals must face the view origin")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return len(self.points)


class ShapeClass(str, enum.Enum):
    BOX = "box"
    CYLINDER = "cylinder"


def _check_watertight(triangles: np.ndarray, n_vertices: int) -> None:
    if triangles.min() < 0 or triangles.max() >= n_vertices:
        raise NotWatertight("triangle index out of range")
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts != 2):
        raise NotWatertight("every edge must be shared by exactly two triangles")


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Closed triangle mesh with counter-clockwise (outward) winding."""

    vertices: np.ndarray
    triangles: np.ndarray
    shape_class: ShapeClass = ShapeClass.BOX

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(f) == 0:
            raise EmptyMesh("mesh has no triangles")
        _check_watertight(f, len(v))
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        object.__setattr__(self, "shape_class", ShapeClass(self.shape_class))

    @property
    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v = self.vertices
        return v[self.triangles[:, 0]], v[self.triangles[:, 1]], v[self.triangles[:, 2]]

    @property
    def face_normals(self) -> np.ndarray:
        a, b, c = self.corners
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def areas(self) -> np.ndarray:
        a, b, c = self.corners
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def transformed(self, pose: Pose) -> TriangleMesh:
        return TriangleMesh(transform_points(pose, self.vertices), self.triangles, self.shape_class)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Contiguous ``(v0, e1, e2)`` arrays consumed by the ray kernel."""
        a, b, c = self.corners
        return (np.ascontiguousarray(a), np.ascontiguousarray(b - a), np.ascontiguousarray(c - a))


@dataclass(frozen=True)
class LocalFrame:
    origin: np.ndarray
    normal: np.ndarray
    curvature_axis: np.ndarray
    binormal: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Columns ``(normal, curvature_axis, binormal)``."""
        return np.column_stack([self.normal, self.curvature_axis, self.binormal])


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    for c in v:
        if abs(c) > 1e-12:
            return v if c > 0 else -v
    return v


def frame_from_neighbors(center, neighbors: np.ndarray, neighbor_normals: np.ndarray | None,
                         view_origin) -> LocalFrame:
    """Darboux-style frame from an already-gathered neighbourhood.

    The normal is the least-variance direction of the neighbour positions,
    turned toward ``view_origin``. The curvature axis is the tangent direction
    along which neighbour normals vary least; when that variation is
    isotropic (planar or umbilic patches) the largest-variance direction of
    the positions is used instead.
    """
    center = np.asarray(center, dtype=float)
    if len(neighbors) < MIN_FRAME_NEIGHBORS:
        raise InsufficientNeighbors(f"{len(neighbors)} neighbours, need {MIN_FRAME_NEIGHBORS}")
    d = neighbors - neighbors.mean(axis=0)
    cov = d.T @ d / len(neighbors)
    w, vecs = np.linalg.eigh(cov)
    if w[2] <= 1e-20 or w[1] <= 1e-10 * w[2]:
        raise DegenerateNeighborhood("neighbourhood is collinear or a single point")
    normal = vecs[:, 0]
    if np.dot(normal, np.asarray(view_origin, dtype=float) - center) < 0:
        normal = -normal
    t1, t2 = vecs[:, 2], np.cross(normal, vecs[:, 2])
    axis = None
    if neighbor_normals is not None and len(neighbor_normals):
        basis = np.column_stack([t1, t2])
        proj = neighbor_normals @ basis
        proj = proj - proj.mean(axis=0)
        m = proj.T @ proj / len(proj)
        mw, mv = np.linalg.eigh(m)
        if mw[1] > 1e-12 and (mw[1] - mw[0]) > 0.25 * (mw[1] + mw[0]):
            axis = basis @ mv[:, 0]
    if axis is None:
        axis = t1
    axis = axis - np.dot(axis, normal) * normal
    axis = _canonical_sign(axis / np.linalg.norm(axis))
    binormal = np.cross(normal, axis)
    return LocalFrame(center.copy(), normal, axis, binormal)


def estimate_local_frame(cloud: PointCloud, center, radius: float = DEFAULT_FRAME_RADIUS) -> LocalFrame:
    center = np.asarray(center, dtype=float)
    pts = cloud.points
    inside = np.einsum("ij,ij->i", pts - center, pts - center) <= radius * radius
    nbr = pts[inside]
    if len(nbr) < MIN_FRAME_NEIGHBORS:
        raise InsufficientNeighbors(f"{len(nbr)} points within {radius} m, need {MIN_FRAME_NEIGHBORS}")
    if cloud.normals is not None:
        nbr_normals = cloud.normals[inside]
    else:
        nbr_normals = _pca_normals(pts, nbr, radius, cloud.view_origin)
    return frame_from_neighbors(center, nbr, nbr_normals, cloud.view_origin)


def _pca_normals(pts: np.ndarray, query: np.ndarray, radius: float, view_origin) -> np.ndarray | None:
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    out = []
    for q, idx in zip(query, tree.query_ball_point(query, radius)):
        if len(idx) < 3:
            continue
        d = pts[idx] - pts[idx].mean(axis=0)
        _, vecs = np.linalg.eigh(d.T @ d)
        n = vecs[:, 0]
        if np.dot(n, view_origin - q) < 0:
            n = -n
        out.append(n)
    return np.array(out) if out else None


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform surface samples and their outward normals."""
    if len(mesh.triangles) == 0:
        raise EmptyMesh("mesh has no triangles")
    _check_watertight(mesh.triangles, len(mesh.vertices))
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    areas = mesh.areas
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (x[tri] for x in mesh.corners)
    pts = (1.0 - r1)[:, None] * a + (r1 * (1.0 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return pts, mesh.face_normals[tri]


def read_obj(path, shape_class: ShapeClass | str = ShapeClass.BOX) -> TriangleMesh:
    verts, faces = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            if len(parts) >= 3 and parts[1] == "shape_class:":
                shape_class = parts[2]
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 3:
                raise ValueError("only triangular faces are supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriangleMesh(np.array(verts), np.array(faces), ShapeClass(shape_class))


def write_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"# shape_class: {mesh.shape_class.value}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_ply(cloud: PointCloud, path) -> None:
    """Binary little-endian PLY with float32 ``x y z nx ny nz``."""
    n = len(cloud)
    normals = cloud.normals if cloud.normals is not None else np.zeros((n, 3))
    ox, oy, oz = cloud.view_origin.tolist()
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"comment view_origin {ox!r} {oy!r} {oz!r}\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "end_header\n"
    )
    body = np.hstack([cloud.points, normals]).astype("<f4").tobytes()
    Path(path).write_bytes(header.encode("ascii") + body)


def read_ply(path) -> PointCloud:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    n, origin = 0, np.zeros(3)
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[:2] == ["comment", "view_origin"]:
            origin = np.array([float(x) for x in parts[2:5]])
        elif parts[:2] == ["format", "binary_little_endian"]:
            continue
        elif parts and parts[0] == "format":
            raise ValueError("only binary_little_endian PLY is supported")
    body = raw[end + len(b"end_header\n"):]
    need = n * 6 * struct.calcsize("<f")
    if len(body) < need:
        raise ValueError(f"{path}: truncated vertex data")
    data = np.frombuffer(body[:need], dtype="<f4").reshape(n, 6).astype(float)
    normals = data[:, 3:]
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    if n and np.all(norms > 0):
        normals = normals / norms
        facing = np.einsum("ij,ij->i", normals, origin - data[:, :3])
        normals[facing < 0] *= -1
        return PointCloud(data[:, :3], normals, origin)
    return PointCloud(data[:, :3], None, origin)
