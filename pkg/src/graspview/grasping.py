"""Two-finger grasp candidates, mesh-based force-closure labels and surrogate scores.

Grasp frame convention
----------------------
x is the approach axis, oriented from the grasp toward the hand (the hand
moves along -x to close in on the object); y is the closing axis along which
the fingers translate; z = x cross y spans the hand height. The frame origin
is the centre of the closing region between the jaws.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from graspview import kernels
from graspview.errors import (
    DegenerateNeighborhood,
    InsufficientNeighbors,
    MissingLabel,
    NoContact,
)
from graspview.geometry import (
    DEFAULT_FRAME_RADIUS,
    PointCloud,
    Pose,
    TriangleMesh,
    frame_from_neighbors,
    rot_x,
    rot_z,
    transform_points,
)

DEFAULT_MU = 0.5
POSITIVE_THRESHOLD = 0.5
SLIDE_BACKOFF = 1e-5
# Lateral hand placements tried per orientation, spread across the aperture.
LATERAL_STEPS = 9
# Ray hits this close to a finger's nearest hit belong to its contact patch.
CONTACT_PATCH_TOL = 1e-3
# Rays per finger side: an n x n grid of cell centres over the finger face.
CONTACT_GRID_SIZE = 9


@dataclass(frozen=True)
class HandGeometry:
    aperture: float = 0.085
    finger_depth: float = 0.06
    finger_width: float = 0.01
    hand_height: float = 0.02

    def __post_init__(self):
        if min(self.aperture, self.finger_depth, self.finger_width, self.hand_height) <= 0:
            raise ValueError("hand dimensions must be positive")
        if self.aperture <= 2 * self.finger_width:
            raise ValueError("aperture must exceed twice the finger width")

    @property
    def base_depth(self) -> float:
        """Thickness of the palm block behind the fingers."""
        return self.finger_width


class Variant(str, enum.Enum):
    CURVATURE_AXIS = "curvature_axis"
    NORMAL_AXIS = "normal_axis"


@dataclass(frozen=True)
class CandidateParams:
    n_samples: int = 100
    orientation_steps: int = 8
    variant: Variant = Variant.CURVATURE_AXIS
    min_points_in_closing_region: int = 10
    frame_radius: float = DEFAULT_FRAME_RADIUS

    def __post_init__(self):
        if self.n_samples < 1 or self.orientation_steps < 1:
            raise ValueError("n_samples and orientation_steps must be >= 1")
        object.__setattr__(self, "variant", Variant(self.variant))


@dataclass(frozen=True)
class GraspHypothesis:
    pose: Pose
    score: float | None = None
    label: bool | None = None

    def __post_init__(self):
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError("score must lie in [0, 1]")

    @property
    def position(self) -> np.ndarray:
        return self.pose.translation

    @property
    def approach(self) -> np.ndarray:
        return self.pose.rotation[:, 0]

    @property
    def closing(self) -> np.ndarray:
        return self.pose.rotation[:, 1]

    def with_score(self, score: float) -> GraspHypothesis:
        return replace(self, score=float(score))

    def with_label(self, label: bool) -> GraspHypothesis:
        return replace(self, label=bool(label))

    def finger_swapped(self) -> GraspHypothesis:
        """Same physical grasp rotated 180 degrees about the approach axis."""
        r = self.pose.rotation * np.array([1.0, -1.0, -1.0])
        return replace(self, pose=Pose(r, self.pose.translation))


def _local(g: GraspHypothesis, points: np.ndarray) -> np.ndarray:
    return (np.asarray(points, dtype=float).reshape(-1, 3) - g.pose.translation) @ g.pose.rotation


def closing_region_points(g: GraspHypothesis, cloud: PointCloud, hand: HandGeometry) -> list[int]:
    q = _local(g, cloud.points)
    inside = (
        (np.abs(q[:, 0]) <= 0.5 * hand.finger_depth)
        & (np.abs(q[:, 1]) <= 0.5 * hand.aperture)
        & (np.abs(q[:, 2]) <= 0.5 * hand.hand_height)
    )
    return np.flatnonzero(inside).tolist()


def hand_boxes(hand: HandGeometry) -> list[tuple[np.ndarray, np.ndarray]]:
    """Closed ``(lo, hi)`` boxes of the two fingers and the palm, grasp frame."""
    fd, ap, fw, hh = hand.finger_depth, hand.aperture, hand.finger_width, hand.hand_height
    outer = 0.5 * ap + fw
    return [
        (np.array([-0.5 * fd, -outer, -0.5 * hh]), np.array([0.5 * fd, -0.5 * ap, 0.5 * hh])),
        (np.array([-0.5 * fd, 0.5 * ap, -0.5 * hh]), np.array([0.5 * fd, outer, 0.5 * hh])),
        (np.array([0.5 * fd, -outer, -0.5 * hh]), np.array([0.5 * fd + hand.base_depth, outer, 0.5 * hh])),
    ]


def check_hand_collision(g: GraspHypothesis, cloud: PointCloud, hand: HandGeometry) -> bool:
    if len(cloud) == 0:
        return False
    q = _local(g, cloud.points)
    for lo, hi in hand_boxes(hand):
        if np.any(np.all((q >= lo) & (q <= hi), axis=1)):
            return True
    return False


def _orientations(frame_matrix: np.ndarray, params: CandidateParams) -> np.ndarray:
    """Hand rotations (columns x, y, z) searched around one surface frame."""
    normal, axis, _ = frame_matrix.T
    angles = np.linspace(-0.5 * np.pi, 0.5 * np.pi, params.orientation_steps, endpoint=False)
    if params.variant is Variant.CURVATURE_AXIS:
        base = np.column_stack([normal, np.cross(axis, normal), axis])
        spin = rot_z
    else:
        base = np.column_stack([normal, axis, np.cross(normal, axis)])
        spin = rot_x
    return np.stack([base @ spin(a) for a in angles])


def generate_candidates(cloud: PointCloud, hand: HandGeometry, params: CandidateParams, seed: int,
                        region: tuple[np.ndarray, float] | None = None) -> list[GraspHypothesis]:
    """Sample surface points, search hand orientations, keep collision-free hands.

    For each orientation the hand is tried at ``LATERAL_STEPS`` placements
    along its closing axis (the seed stays between the jaws) and slides in
    along -x from outside the cloud. It stops at the first collision, or one
    finger depth past the point where the closing region first touches the
    cloud, whichever comes first. The closing region must then hold at least
    ``min_points_in_closing_region`` points. Of the feasible lateral
    placements the middle one is kept, which centres the hand on the object.
    With ``region=(center, radius)`` only seed points inside that ball are
    used.
    """
    pts = cloud.points
    if len(pts) == 0:
        return []
    pool = np.arange(len(pts))
    if region is not None:
        center, radius = np.asarray(region[0], dtype=float), float(region[1])
        pool = pool[np.einsum("ij,ij->i", pts - center, pts - center) <= radius * radius]
    if len(pool) == 0:
        return []
    rng = np.random.default_rng(seed)
    if params.n_samples >= len(pool):
        chosen = pool
    else:
        chosen = np.sort(rng.choice(pool, size=params.n_samples, replace=False))
    tree = cKDTree(pts)
    neighbor_lists = tree.query_ball_point(pts[chosen], params.frame_radius)
    seeds, rots = [], []
    for idx, nbrs in zip(chosen, neighbor_lists):
        nbrs = np.sort(np.asarray(nbrs, dtype=np.int64))
        normals = cloud.normals[nbrs] if cloud.normals is not None else None
        try:
            frame = frame_from_neighbors(pts[idx], pts[nbrs], normals, cloud.view_origin)
        except (InsufficientNeighbors, DegenerateNeighborhood):
            continue
        seeds.append(pts[idx])
        rots.append(_orientations(frame.matrix, params))
    if not seeds:
        return []
    seeds_arr = np.ascontiguousarray(seeds)
    rots_arr = np.ascontiguousarray(rots)
    half = 0.5 * hand.aperture
    shifts = np.linspace(-half, half, LATERAL_STEPS + 2)[1:-1]
    offset, shift, _, ok = kernels.hand_search(
        np.ascontiguousarray(pts), seeds_arr, rots_arr, shifts,
        hand.finger_depth, hand.aperture, hand.finger_width, hand.hand_height,
        hand.base_depth, SLIDE_BACKOFF, params.min_points_in_closing_region,
    )
    out = []
    for s, k in zip(*np.nonzero(ok)):
        r = rots_arr[s, k]
        t = seeds_arr[s] + offset[s, k] * r[:, 0] + shift[s, k] * r[:, 1]
        out.append(GraspHypothesis(Pose(r, t)))
    return out


# Force closure -----------------------------------------------------------------

def contact_offsets(n: int = CONTACT_GRID_SIZE) -> np.ndarray:
    """Cell centres of an ``n``-cell partition of [-1/2, 1/2]."""
    return (np.arange(n) + 0.5) / n - 0.5


def _finger_rays(poses: list[Pose], hand: HandGeometry, grid_size: int = CONTACT_GRID_SIZE):
    """Ray origins/directions for both fingers of every pose.

    Returns arrays shaped ``(G, 2, R, 3)``: finger 0 sits at -y and closes
    along +y, finger 1 sits at +y and closes along -y.
    """
    grid = contact_offsets(grid_size)
    xs = grid * hand.finger_depth
    zs = grid * hand.hand_height
    xx, zz = np.meshgrid(xs, zs, indexing="ij")
    xx, zz = xx.ravel(), zz.ravel()
    half = 0.5 * hand.aperture
    local = np.stack([
        np.column_stack([xx, np.full_like(xx, -half), zz]),
        np.column_stack([xx, np.full_like(xx, half), zz]),
    ])
    rot = np.stack([p.rotation for p in poses])
    trans = np.stack([p.translation for p in poses])
    origins = np.einsum("gij,frj->gfri", rot, local) + trans[:, None, None, :]
    closing = rot[:, :, 1]
    dirs = np.stack([closing, -closing], axis=1)[:, :, None, :]
    dirs = np.broadcast_to(dirs, origins.shape)
    return origins, dirs


def _finger_contact(t: np.ndarray, normals: np.ndarray):
    """Nearest-hit patch of one finger: (depth, mean normal) or None."""
    hit = np.isfinite(t)
    if not hit.any():
        return None
    t_min = t[hit].min()
    patch = hit & (t <= t_min + CONTACT_PATCH_TOL)
    n = np.array([math.fsum(normals[patch, k]) for k in range(3)])
    norm = np.linalg.norm(n)
    # Opposing facet normals can cancel; such a patch has no usable direction.
    return t_min, (n / norm if norm > 1e-12 else np.zeros(3))


def _judge(t: np.ndarray, normals: np.ndarray, closing: np.ndarray, hand: HandGeometry, mu: float) -> bool:
    hit = np.isfinite(t)
    # A first hit on a back face means the ray starts inside the solid: that
    # finger already intersects the object, which no closing motion can fix.
    if np.any(normals[0][hit[0]] @ closing > 0.0) or np.any(normals[1][hit[1]] @ -closing > 0.0):
        return False
    c0 = _finger_contact(t[0], normals[0])
    c1 = _finger_contact(t[1], normals[1])
    if c0 is None or c1 is None:
        raise NoContact("a finger closes on empty space")
    separation = hand.aperture - c0[0] - c1[0]
    if separation < 0.0 or separation > hand.aperture:
        return False
    cos_cone = math.cos(math.atan(mu))
    return bool(np.dot(c0[1], -closing) >= cos_cone and np.dot(c1[1], closing) >= cos_cone)


def label_grasps(mesh: TriangleMesh, object_pose: Pose, grasps: list[GraspHypothesis],
                 hand: HandGeometry, mu: float = DEFAULT_MU, grid_size: int = CONTACT_GRID_SIZE) -> list[bool]:
    """Force-closure labels for many grasps with one batched ray cast."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if not grasps:
        return []
    world = mesh.transformed(object_pose)
    v0, e1, e2 = world.edge_arrays()
    face_n = world.face_normals
    origins, dirs = _finger_rays([g.pose for g in grasps], hand, grid_size)
    shape = origins.shape[:3]
    t, tri = kernels.ray_first_hit(np.ascontiguousarray(origins.reshape(-1, 3)),
                                   np.ascontiguousarray(dirs.reshape(-1, 3)),
                                   v0, e1, e2, 0.0, hand.aperture)
    t = t.reshape(shape)
    normals = np.where((tri >= 0)[:, None], face_n[np.maximum(tri, 0)], 0.0).reshape(shape + (3,))
    labels = []
    for i, g in enumerate(grasps):
        try:
            labels.append(_judge(t[i], normals[i], g.closing, hand, mu))
        except NoContact:
            labels.append(False)
    return labels


def evaluate_force_closure(mesh: TriangleMesh, object_pose: Pose, g: GraspHypothesis,
                           hand: HandGeometry, mu: float = DEFAULT_MU, grid_size: int = CONTACT_GRID_SIZE) -> bool:
    """Antipodal two-contact force closure of ``g`` on the posed mesh.

    Each finger casts a ``grid_size`` x ``grid_size`` grid of rays from its
    inner face toward the other finger, up to one aperture away. The hits
    within ``CONTACT_PATCH_TOL`` of the nearest one form the contact patch,
    whose mean normal must lie inside the friction cone (half-angle
    ``atan(mu)``) around the finger's closing direction. False when a finger
    hits nothing, or when any ray first meets a back face (the finger starts
    inside the object).
    """
    return label_grasps(mesh, object_pose, [g], hand, mu, grid_size)[0]


# Scoring -----------------------------------------------------------------------

class ScorerKind(str, enum.Enum):
    NOISY_ORACLE = "noisy_oracle"
    GEOMETRIC = "geometric"


@dataclass(frozen=True)
class ScorerSpec:
    kind: ScorerKind = ScorerKind.NOISY_ORACLE
    # NoisyOracle: positives ~ Beta(a, b), negatives ~ Beta(b, a).
    beta_a: float = 8.0
    beta_b: float = 2.0
    # Geometric: logistic(bias + w . (antipodal, count, margin, depth)).
    # Weights fitted by logistic regression on a generated training corpus.
    bias: float = -18.0
    w_antipodal: float = 5.0
    w_count: float = 13.0
    w_margin: float = 1.0
    w_depth: float = 13.0
    count_norm: float = 40.0
    mu: float = DEFAULT_MU

    def __post_init__(self):
        object.__setattr__(self, "kind", ScorerKind(self.kind))

    @property
    def ident(self) -> str:
        if self.kind is ScorerKind.NOISY_ORACLE:
            return f"noisy_oracle(beta={self.beta_a:g},{self.beta_b:g})"
        return (f"geometric(bias={self.bias:g},w=({self.w_antipodal:g},{self.w_count:g},"
                f"{self.w_margin:g},{self.w_depth:g}),count_norm={self.count_norm:g})")


def geometric_features(g: GraspHypothesis, cloud: PointCloud, hand: HandGeometry, mu: float = DEFAULT_MU):
    """(antipodal, count, margin, depth) features, all zero for an empty closing region.

    ``antipodal`` rewards cloud normals inside the friction cone on both
    sides of the jaws, ``margin`` is the free space between the outermost
    point and the fingers, and ``depth`` is the mean insertion of the region's
    points toward the palm, in finger depths (positive = deep in the jaws).
    """
    idx = closing_region_points(g, cloud, hand)
    if not idx:
        return 0.0, 0, 0.0, 0.0
    q = _local(g, cloud.points[idx])
    cos_cone = math.cos(math.atan(mu))
    if cloud.normals is not None:
        ny = cloud.normals[idx] @ g.closing
        left = np.count_nonzero((q[:, 1] < 0) & (ny <= -cos_cone))
        right = np.count_nonzero((q[:, 1] > 0) & (ny >= cos_cone))
        antipodal = 0.5 * (min(left, 3) + min(right, 3)) / 3.0
    else:
        antipodal = 0.0
    margin = (0.5 * hand.aperture - np.abs(q[:, 1]).max()) / (0.5 * hand.aperture)
    depth = q[:, 0].mean() / hand.finger_depth
    return float(antipodal), len(idx), float(margin), float(depth)


def score_candidate(g: GraspHypothesis, cloud: PointCloud, hand: HandGeometry, scorer: ScorerSpec,
                    seed: int) -> float:
    if scorer.kind is ScorerKind.NOISY_ORACLE:
        if g.label is None:
            raise MissingLabel("the noisy-oracle scorer needs a ground-truth label")
        rng = np.random.default_rng(seed)
        a, b = (scorer.beta_a, scorer.beta_b) if g.label else (scorer.beta_b, scorer.beta_a)
        return float(rng.beta(a, b))
    antipodal, count, margin, depth = geometric_features(g, cloud, hand, scorer.mu)
    z = (scorer.bias + scorer.w_antipodal * antipodal + scorer.w_count * min(count / scorer.count_norm, 1.0)
         + scorer.w_margin * margin + scorer.w_depth * depth)
    return float(1.0 / (1.0 + math.exp(-z)))


def score_and_label(grasps: list[GraspHypothesis], cloud: PointCloud, mesh: TriangleMesh,
                    object_pose: Pose, hand: HandGeometry, scorer: ScorerSpec, seeds,
                    mu: float = DEFAULT_MU) -> list[GraspHypothesis]:
    """Attach ground-truth labels, then scores (one derived seed per grasp)."""
    labels = label_grasps(mesh, object_pose, grasps, hand, mu)
    out = []
    for g, lab, s in zip(grasps, labels, seeds):
        g = g.with_label(lab)
        out.append(g.with_score(score_candidate(g, cloud, hand, scorer, int(s))))
    return out


def write_candidates_jsonl(grasps: list[GraspHypothesis], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in grasps:
            fh.write(json.dumps({"pose": g.pose.to_row12(), "score": g.score, "label": g.label}) + "\n")


def read_candidates_jsonl(path) -> list[GraspHypothesis]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out.append(GraspHypothesis(Pose.from_row12(rec["pose"]), rec["score"], rec["label"]))
    return out


def transform_grasp(pose: Pose, g: GraspHypothesis) -> GraspHypothesis:
    """Express ``g`` after applying the rigid motion ``pose`` to the world."""
    r = pose.rotation @ g.pose.rotation
    t = transform_points(pose, g.pose.translation)[0]
    return replace(g, pose=Pose(r, t))
