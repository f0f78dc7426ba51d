"""Viewpoint selection strategies, neighbourhood pruning and top-n accuracy."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from graspview.errors import EmptyAvailableSet, MissingLabel, MissingMap, NoCandidatesFound, ZeroVector
from graspview.geometry import PointCloud
from graspview.grasping import CandidateParams, GraspHypothesis, HandGeometry, generate_candidates
from graspview.simcam import ViewpointSpec
from graspview.viewmap import ViewMapGrid, direction_to_angles, project_viewpoint

ALIGNMENT_RADIUS = 0.08


class StrategyKind(str, enum.Enum):
    SMART = "smart"
    HEAD_ON = "head_on"
    RANDOM = "random"


@dataclass(frozen=True)
class StrategySpec:
    kind: StrategyKind
    map: ViewMapGrid | None = None
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.kind is StrategyKind.RANDOM and self.seed is None:
            raise ValueError("the random strategy needs a seed")
        if self.kind is StrategyKind.SMART and self.map is not None:
            tpfp = self.map.channel("tp_minus_fp")
            if np.any(np.isinf(tpfp)):
                raise ValueError("tp_minus_fp must be finite")

    @property
    def name(self) -> str:
        return self.kind.value


def _view_angles(target: GraspHypothesis, view: ViewpointSpec) -> tuple[float, float]:
    try:
        return direction_to_angles(project_viewpoint(view.position, target.pose))
    except ZeroVector:
        return math.inf, math.inf


def select_viewpoint_index(strategy: StrategySpec, target: GraspHypothesis, available) -> int:
    """Index into ``available`` of the view chosen by ``strategy``."""
    available = list(available)
    if not available:
        raise EmptyAvailableSet("no viewpoints to choose from")
    if strategy.kind is StrategyKind.RANDOM:
        return int(np.random.default_rng(strategy.seed).integers(len(available)))
    if strategy.kind is StrategyKind.HEAD_ON:
        best, best_angle = 0, math.inf
        for i, v in enumerate(available):
            d = project_viewpoint(v.position, target.pose)
            norm = np.linalg.norm(d)
            angle = math.acos(max(-1.0, min(1.0, d[0] / norm))) if norm > 1e-9 else math.inf
            if angle < best_angle:
                best, best_angle = i, angle
        return best
    if strategy.map is None:
        raise MissingMap("the smart strategy needs a map")
    keys = []
    for i, v in enumerate(available):
        az, el = _view_angles(target, v)
        value = strategy.map.interpolate("tp_minus_fp", az, el) if math.isfinite(az) else -math.inf
        keys.append((-value, abs(el), abs(az), i))
    return min(keys)[3]


def select_viewpoint(strategy: StrategySpec, target: GraspHypothesis, available) -> ViewpointSpec:
    """Pick a viewpoint for observing ``target``.

    Smart maximises the bilinearly interpolated ``tp_minus_fp`` map value at
    the view's direction in the target frame; views outside the map extent
    score ``-inf``. Ties go to the smallest ``|elevation|``, then the smallest
    ``|azimuth|``, then input order. HeadOn takes the view closest in angle to
    the target's approach axis. Random draws uniformly with the strategy seed.

    Raises
    ------
    EmptyAvailableSet
        If ``available`` is empty.
    MissingMap
        If a smart strategy carries no map.
    """
    available = list(available)
    return available[select_viewpoint_index(strategy, target, available)]


def _rotation_angle(ra: np.ndarray, rb: np.ndarray) -> float:
    c = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return math.acos(max(-1.0, min(1.0, c)))


def grasp_distance(a: GraspHypothesis, b: GraspHypothesis, finger_swap: bool = True) -> tuple[float, float]:
    """(translation, geodesic rotation) between two grasps.

    With ``finger_swap`` the rotation is the smaller of the distances to ``b``
    and to ``b`` turned 180 degrees about its approach axis, since swapping
    the two fingers of a symmetric hand gives the same physical grasp.
    """
    trans = float(np.linalg.norm(a.position - b.position))
    rot = _rotation_angle(a.pose.rotation, b.pose.rotation)
    if finger_swap:
        rot = min(rot, _rotation_angle(a.pose.rotation, b.finger_swapped().pose.rotation))
    return trans, rot


@dataclass(frozen=True)
class NeighborhoodSpec:
    max_translation: float = 0.02
    max_rotation: float = math.radians(20.0)
    finger_swap: bool = True

    def __post_init__(self):
        if not (self.max_translation > 0 and self.max_rotation > 0):
            raise ValueError("neighbourhood bounds must be positive")


def prune_to_neighborhood(grasps, target: GraspHypothesis, spec: NeighborhoodSpec = NeighborhoodSpec()):
    """Grasps within both bounds of ``target``, in input order."""
    out = []
    for g in grasps:
        t, r = grasp_distance(target, g, spec.finger_swap)
        if t <= spec.max_translation and r <= spec.max_rotation:
            out.append(g)
    return out


def rank_by_score(grasps) -> list[GraspHypothesis]:
    """Descending score; ties broken by the bytes of the pose."""
    return sorted(grasps, key=lambda g: (-g.score, np.asarray(g.pose.to_row12()).tobytes()))


def top_n_accuracy(grasps, n: int) -> float:
    """Fraction of true labels among the ``n`` best-scored grasps; NaN if there are none."""
    if n < 1:
        raise ValueError("n must be at least 1")
    grasps = list(grasps)
    if any(g.label is None for g in grasps):
        raise MissingLabel("top-n accuracy needs labelled grasps")
    if not grasps:
        return math.nan
    top = rank_by_score(grasps)[:n]
    return sum(1 for g in top if g.label) / len(top)


def top_n_curve(grasps, ns) -> list[tuple[int, float]]:
    ranked = rank_by_score(grasps)
    return [(int(n), top_n_accuracy(ranked, n)) for n in ns]


def alignment_refine(cloud: PointCloud, target: GraspHypothesis, hand: HandGeometry, params: CandidateParams,
                     radius: float = ALIGNMENT_RADIUS, seed: int = 0, finger_swap: bool = True) -> GraspHypothesis:
    """Candidate near ``target`` best aligned with it, without any scoring.

    Candidates are generated only from seed points within ``radius`` of the
    target position. The one with the smallest rotation distance wins; ties
    go to the smaller translation distance, then generation order.

    Raises
    ------
    NoCandidatesFound
        If no candidate can be generated in the ball.
    """
    if len(cloud) == 0:
        raise NoCandidatesFound("empty cloud")
    cands = generate_candidates(cloud, hand, params, seed, region=(target.position, radius))
    if not cands:
        raise NoCandidatesFound(f"no candidates within {radius} m of the target")
    keys = [(*reversed(grasp_distance(target, g, finger_swap)), i) for i, g in enumerate(cands)]
    return cands[min(keys)[2]]
