"""Time the compiled kernels against the numpy fallback on typical workloads.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N]``. Each row reports
the best-of-N wall time per backend, the speedup, and whether both backends
returned the same result.
"""
import argparse
import math
import timeit

import numpy as np

from graspview import _pykernels
from graspview.geometry import Pose
from graspview.grasping import SLIDE_BACKOFF, HandGeometry
from graspview.harness.corpus import make_cylinder
from graspview.simcam import CameraModel, ViewpointSpec, render_cloud, viewpoint_to_pose

try:
    from graspview import _ckernels
except ImportError:
    _ckernels = None


def ray_case():
    """A full default-resolution camera frame against a 64-segment cylinder."""
    mesh = make_cylinder(0.04, 0.15, segments=64)
    cam = CameraModel()
    pose = viewpoint_to_pose(ViewpointSpec(0.3, 0.5, 0.4))
    dirs = np.ascontiguousarray(cam.pixel_rays().reshape(-1, 3) @ pose.rotation.T)
    origins = np.ascontiguousarray(np.broadcast_to(pose.translation, dirs.shape))
    v0, e1, e2 = mesh.edge_arrays()
    return (origins, dirs, v0, e1, e2, 1e-9, math.inf)


def hand_case():
    """Every orientation of 100 seeds on a rendered cylinder cloud."""
    mesh = make_cylinder(0.04, 0.15, segments=64)
    pose = viewpoint_to_pose(ViewpointSpec(0.3, 0.5, 0.4))
    cloud = render_cloud([(mesh, Pose.identity())], CameraModel(), pose, 0)
    hand = HandGeometry()
    rng = np.random.default_rng(0)
    pts = np.ascontiguousarray(cloud.points)
    seeds = np.ascontiguousarray(pts[rng.choice(len(pts), 100, replace=False)])
    rots = np.ascontiguousarray(np.stack([_rot(rng) for _ in range(100 * 8)]).reshape(100, 8, 3, 3))
    shifts = np.ascontiguousarray(np.linspace(-0.02, 0.02, 9))
    return (pts, seeds, rots, shifts, hand.finger_depth, hand.aperture, hand.finger_width,
            hand.hand_height, hand.base_depth, SLIDE_BACKOFF, 10)


def splat_case():
    """Twenty thousand samples onto the default 43 x 43 grid."""
    rng = np.random.default_rng(1)
    n = 20000
    theta = np.ascontiguousarray(rng.uniform(-math.pi, math.pi, n))
    phi = np.ascontiguousarray(rng.uniform(-1.2, 1.2, n))
    weights = np.ascontiguousarray(rng.random((n, 4)))
    grid = np.ascontiguousarray(np.arange(-21, 22) * 0.05)
    return (theta, phi, weights, grid, 0.2)


def _rot(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    return q if np.linalg.det(q) > 0 else -q


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype.kind == "f":
        return a.shape == b.shape and np.allclose(a, b, rtol=1e-9, atol=1e-12, equal_nan=True)
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    cases = [("ray_first_hit", ray_case()), ("hand_search", hand_case()), ("gaussian_splat", splat_case())]
    print(f"{'kernel':<16}{'numpy s':>10}{'compiled s':>12}{'speedup':>10}  agree")
    for name, case in cases:
        py = getattr(_pykernels, name)
        t_py = min(timeit.repeat(lambda: py(*case), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{name:<16}{t_py:>10.4f}{'n/a':>12}{'n/a':>10}  n/a")
            continue
        c = getattr(_ckernels, name)
        t_c = min(timeit.repeat(lambda: c(*case), number=1, repeat=args.repeat))
        print(f"{name:<16}{t_py:>10.4f}{t_c:>12.4f}{t_py / t_c:>9.1f}x  {_same(py(*case), c(*case))}")


if __name__ == "__main__":
    main()
