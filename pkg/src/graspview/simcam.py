"""Simulated depth camera: viewpoints on a sphere and per-pixel ray casting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from graspview import kernels
from graspview.errors import EmptyRange, GimbalDegenerate
from graspview.geometry import PointCloud, Pose, TriangleMesh, transform_points

DEFAULT_VIEW_RADIUS = 0.4
# Neighbouring pixels further apart than this in depth are not used for normals.
NORMAL_DEPTH_JUMP = 0.01


@dataclass(frozen=True)
class CameraModel:
    width: int = 160
    height: int = 120
    focal_length: float = 120.0
    min_depth: float = 0.20
    max_depth: float = 1.5
    noise_sigma: float = 0.001

    def __post_init__(self):
        if not (0 < self.min_depth < self.max_depth):
            raise ValueError("need 0 < min_depth < max_depth")
        if self.focal_length <= 0 or self.width < 1 or self.height < 1:
            raise ValueError("invalid camera intrinsics")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray directions with unit optical depth, ``(H, W, 3)``.

        The camera looks down its -z axis; x points right, y up.
        """
        u = (np.arange(self.width) + 0.5 - 0.5 * self.width) / self.focal_length
        v = (np.arange(self.height) + 0.5 - 0.5 * self.height) / self.focal_length
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, -vv, -np.ones_like(uu)], axis=-1)


@dataclass(frozen=True)
class ViewpointSpec:
    azimuth: float
    elevation: float
    radius: float = DEFAULT_VIEW_RADIUS
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    up_hint: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if not (-np.pi / 2 <= self.elevation <= np.pi / 2):
            raise ValueError("elevation must lie in [-pi/2, pi/2]")
        if not (-np.pi < self.azimuth <= np.pi):
            raise ValueError("azimuth must lie in (-pi, pi]")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).reshape(3))
        up = np.asarray(self.up_hint, dtype=float).reshape(3)
        object.__setattr__(self, "up_hint", up / np.linalg.norm(up))

    @property
    def direction(self) -> np.ndarray:
        ce = np.cos(self.elevation)
        return np.array([ce * np.cos(self.azimuth), ce * np.sin(self.azimuth), np.sin(self.elevation)])

    @property
    def position(self) -> np.ndarray:
        return self.target + self.radius * self.direction


def look_at(position, target, up_hint) -> Pose:
    """Camera pose at ``position`` whose -z axis points at ``target``."""
    position = np.asarray(position, dtype=float)
    back = position - np.asarray(target, dtype=float)
    back = back / np.linalg.norm(back)
    up = np.asarray(up_hint, dtype=float)
    up = up / np.linalg.norm(up)
    if abs(np.dot(-back, up)) > 1.0 - 1e-6:
        raise GimbalDegenerate("optical axis is parallel to the up hint")
    right = np.cross(up, back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    return Pose(np.column_stack([right, true_up, back]), position)


def viewpoint_to_pose(v: ViewpointSpec) -> Pose:
    return look_at(v.position, v.target, v.up_hint)


def sample_view_sphere(n: int, elevation_range=(0.05, np.pi / 2), seed: int = 0,
                       radius: float = DEFAULT_VIEW_RADIUS, target=(0.0, 0.0, 0.0)) -> list[ViewpointSpec]:
    """Viewpoints uniform by area over a spherical band."""
    lo, hi = (float(x) for x in elevation_range)
    if n < 1:
        raise ValueError("n must be at least 1")
    if lo > hi or lo < -np.pi / 2 or hi > np.pi / 2:
        raise EmptyRange(f"invalid elevation band [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    az = rng.uniform(-np.pi, np.pi, size=n)
    az[az <= -np.pi] = np.pi
    if lo == hi:
        el = np.full(n, lo)
    else:
        el = np.arcsin(rng.uniform(np.sin(lo), np.sin(hi), size=n))
        el = np.clip(el, lo, hi)
    target = np.asarray(target, dtype=float)
    return [ViewpointSpec(float(a), float(e), radius, target) for a, e in zip(az, el)]


def _scene_triangles(scene) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    parts = [mesh.transformed(pose).edge_arrays() for mesh, pose in scene]
    return tuple(np.ascontiguousarray(np.concatenate(p)) for p in zip(*parts))


def _pixel_window(cam: CameraModel, cam_pose: Pose, scene) -> tuple[slice, slice] | None:
    """Pixel bounding box of the projected scene, or None when nothing can be seen."""
    world = np.concatenate([transform_points(pose, mesh.vertices) for mesh, pose in scene])
    local = (world - cam_pose.translation) @ cam_pose.rotation
    depth = -local[:, 2]
    if depth.max() <= 0:
        return None
    if depth.min() <= 1e-9:
        return slice(0, cam.height), slice(0, cam.width)
    u = local[:, 0] / depth * cam.focal_length + 0.5 * cam.width
    v = -local[:, 1] / depth * cam.focal_length + 0.5 * cam.height
    u0, u1 = int(np.floor(u.min())) - 1, int(np.ceil(u.max())) + 1
    v0, v1 = int(np.floor(v.min())) - 1, int(np.ceil(v.max())) + 1
    u0, v0 = max(u0, 0), max(v0, 0)
    u1, v1 = min(u1, cam.width), min(v1, cam.height)
    if u0 >= u1 or v0 >= v1:
        return None
    return slice(v0, v1), slice(u0, u1)


def _depth_image_normals(pts: np.ndarray, depth: np.ndarray, valid: np.ndarray,
                         view_dirs: np.ndarray) -> np.ndarray:
    """Normals from neighbouring-pixel differences, facing the camera."""
    h, w = depth.shape

    def diff(axis):
        fwd = np.zeros_like(pts)
        bwd = np.zeros_like(pts)
        ok_f = np.zeros_like(valid)
        ok_b = np.zeros_like(valid)
        if axis == 1:
            fwd[:, :-1] = pts[:, 1:] - pts[:, :-1]
            ok_f[:, :-1] = valid[:, 1:] & valid[:, :-1] & (np.abs(depth[:, 1:] - depth[:, :-1]) < NORMAL_DEPTH_JUMP)
            bwd[:, 1:] = fwd[:, :-1]
            ok_b[:, 1:] = ok_f[:, :-1]
        else:
            fwd[:-1] = pts[1:] - pts[:-1]
            ok_f[:-1] = valid[1:] & valid[:-1] & (np.abs(depth[1:] - depth[:-1]) < NORMAL_DEPTH_JUMP)
            bwd[1:] = fwd[:-1]
            ok_b[1:] = ok_f[:-1]
        both = ok_f & ok_b
        d = np.where(both[..., None], fwd + bwd, np.where(ok_f[..., None], fwd, bwd))
        return d, ok_f | ok_b

    du, ok_u = diff(1)
    dv, ok_v = diff(0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    good = ok_u & ok_v & (norm > 1e-15)
    n = np.where(good[..., None], n / np.where(norm > 0, norm, 1.0)[..., None], -view_dirs)
    flip = np.einsum("...k,...k->...", n, view_dirs) > 0
    n[flip] *= -1
    return n


def render_cloud(scene, cam: CameraModel, cam_pose: Pose, seed: int) -> PointCloud:
    """Ray-cast a depth image of ``scene`` (list of ``(mesh, pose)``) and lift it to 3D."""
    if not scene:
        raise ValueError("scene must contain at least one mesh")
    origin = cam_pose.translation.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((cam.height, cam.width)) * cam.noise_sigma
    window = _pixel_window(cam, cam_pose, scene)
    if window is None:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), origin)
    rows, cols = window
    rays_cam = cam.pixel_rays()[rows, cols]
    h, w = rays_cam.shape[:2]
    dirs = rays_cam.reshape(-1, 3) @ cam_pose.rotation.T
    origins = np.broadcast_to(origin, dirs.shape)
    v0, e1, e2 = _scene_triangles(scene)
    t, _ = kernels.ray_first_hit(np.ascontiguousarray(origins), np.ascontiguousarray(dirs),
                                 v0, e1, e2, 1e-9, np.inf)
    # Ray directions have unit optical depth, so t is the depth reading.
    depth = t.reshape(h, w)
    valid = np.isfinite(depth) & (depth >= cam.min_depth) & (depth <= cam.max_depth)
    depth = np.where(valid, depth + noise[rows, cols], np.nan)
    dirs = dirs.reshape(h, w, 3)
    pts = origin + np.where(valid, depth, 0.0)[..., None] * dirs
    unit_dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    normals = _depth_image_normals(pts, np.where(valid, depth, 0.0), valid, unit_dirs)
    return PointCloud(pts[valid], normals[valid], origin)
