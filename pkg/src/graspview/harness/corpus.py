"""Procedural box and capped-cylinder meshes standing in for scanned objects."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from graspview.geometry import ShapeClass, TriangleMesh

CYLINDER_SEGMENTS = 48


def make_box(dx: float, dy: float, dz: float) -> TriangleMesh:
    """Axis-aligned box centred on the origin."""
    hx, hy, hz = 0.5 * dx, 0.5 * dy, 0.5 * dz
    v = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.array(tris), ShapeClass.BOX)


def make_cylinder(radius: float, height: float, segments: int = CYLINDER_SEGMENTS) -> TriangleMesh:
    """Z-aligned capped cylinder centred on the origin."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])
    h = 0.5 * height
    v = np.vstack([
        np.column_stack([ring, np.full(segments, -h)]),
        np.column_stack([ring, np.full(segments, h)]),
        [[0.0, 0.0, -h], [0.0, 0.0, h]],
    ])
    bottom_c, top_c = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        b0, b1, t0, t1 = i, j, segments + i, segments + j
        tris += [(b0, b1, t1), (b0, t1, t0), (bottom_c, b1, b0), (top_c, t0, t1)]
    return TriangleMesh(v, np.array(tris), ShapeClass.CYLINDER)


@dataclass(frozen=True)
class CorpusSpec:
    n_box: int = 25
    n_cylinder: int = 14
    box_dims: tuple = ((0.04, 0.075), (0.05, 0.14), (0.06, 0.18))
    cylinder_radius: tuple = (0.02, 0.04)
    cylinder_height: tuple = (0.06, 0.16)
    seed: int = 0

    def __post_init__(self):
        if self.n_box < 0 or self.n_cylinder < 0:
            raise ValueError("object counts must be non-negative")
        object.__setattr__(self, "box_dims", tuple(tuple(float(x) for x in iv) for iv in self.box_dims))
        object.__setattr__(self, "cylinder_radius", tuple(float(x) for x in self.cylinder_radius))
        object.__setattr__(self, "cylinder_height", tuple(float(x) for x in self.cylinder_height))
        if len(self.box_dims) != 3:
            raise ValueError("box_dims needs three intervals")
        for lo, hi in (*self.box_dims, self.cylinder_radius, self.cylinder_height):
            if not (0 < lo <= hi):
                raise ValueError(f"interval [{lo}, {hi}] must be positive and ordered")


def _draw(rng: np.random.Generator, interval) -> float:
    lo, hi = interval
    return lo if lo == hi else float(rng.uniform(lo, hi))


def build_corpus(spec: CorpusSpec) -> list[TriangleMesh]:
    """Boxes first, then cylinders; dimensions drawn uniformly from the intervals."""
    rng = np.random.default_rng(spec.seed)
    meshes = []
    for _ in range(spec.n_box):
        meshes.append(make_box(*(_draw(rng, iv) for iv in spec.box_dims)))
    for _ in range(spec.n_cylinder):
        r = _draw(rng, spec.cylinder_radius)
        meshes.append(make_cylinder(r, _draw(rng, spec.cylinder_height)))
    return meshes
