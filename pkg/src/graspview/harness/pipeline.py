"""Experiment pipelines: map building, offline strategy comparison, view sequences.

Every random stream is derived from ``(master_seed, stage, ids...)`` so work
items can run in any order or process and give identical results. Objects sit
at the world origin with identity pose; viewpoints look at the origin.
"""
from __future__ import annotations

import enum
import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from graspview.errors import GimbalDegenerate, GraspViewError, NoCandidatesFound, PipelineError
from graspview.geometry import Pose, ShapeClass
from graspview.grasping import generate_candidates, label_grasps, score_and_label
from graspview.harness.config import ExperimentConfig, derive_seed, derive_seeds
from graspview.harness.corpus import build_corpus
from graspview.selection import (
    StrategyKind,
    StrategySpec,
    alignment_refine,
    prune_to_neighborhood,
    rank_by_score,
    select_viewpoint_index,
    top_n_accuracy,
)
from graspview.simcam import look_at, render_cloud, sample_view_sphere, viewpoint_to_pose
from graspview.viewmap import RawSampleSet, ViewMapGrid, accumulate, average_maps, merge, smooth, view_samples

log = logging.getLogger(__name__)

IDENTITY = Pose.identity()
SCORE_BINS = 20


class SequenceOrder(str, enum.Enum):
    V1 = "V1"
    V1_V2 = "V1_V2"
    V1_V3 = "V1_V3"
    V1_V2_V3 = "V1_V2_V3"


@functools.lru_cache(maxsize=4)
def corpus_meshes(spec) -> tuple:
    return tuple(build_corpus(spec))


def class_objects(config: ExperimentConfig, shape_class) -> list[int]:
    shape_class = ShapeClass(shape_class)
    return [i for i, m in enumerate(corpus_meshes(config.corpus)) if m.shape_class is shape_class]


def _run(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def detect(config: ExperimentConfig, mesh, cam_pose: Pose, keys: tuple, region=None, score: bool = True,
           scorer=None):
    """Render, generate candidates and (optionally) score; labels always attached.

    ``scorer`` defaults to ``config.scorer``. Labels always use ``config.scorer.mu``.
    """
    ms = config.master_seed
    cloud = render_cloud([(mesh, IDENTITY)], config.camera, cam_pose, derive_seed(ms, "render", *keys))
    cands = generate_candidates(cloud, config.hand, config.candidates, derive_seed(ms, "cand", *keys), region)
    if score:
        seeds = derive_seeds(ms, len(cands), "score", *keys)
        cands = score_and_label(cands, cloud, mesh, IDENTITY, config.hand, scorer or config.scorer, seeds,
                                config.scorer.mu)
    else:
        labels = label_grasps(mesh, IDENTITY, cands, config.hand, config.scorer.mu)
        cands = [g.with_label(lab) for g, lab in zip(cands, labels)]
    return cloud, cands


# Map building ---------------------------------------------------------------------

def _map_item(args) -> RawSampleSet:
    config, obj, view_id, view = args
    mesh = corpus_meshes(config.corpus)[obj]
    try:
        _, grasps = detect(config, mesh, viewpoint_to_pose(view), ("map", obj, view_id))
        return accumulate(view_samples(view.position, grasps), config.threshold)
    except GraspViewError as exc:
        raise PipelineError(f"object {obj}, view {view_id}: {exc}") from exc


def map_views(config: ExperimentConfig, obj: int):
    return sample_view_sphere(config.views_per_object, seed=derive_seed(config.master_seed, "map-views", obj),
                              radius=config.view_radius)


def build_map(config: ExperimentConfig, shape_class, jobs: int = 1) -> ViewMapGrid:
    """Average of per-object smoothed maps over every corpus object of ``shape_class``."""
    shape_class = ShapeClass(shape_class)
    objs = class_objects(config, shape_class)
    if not objs:
        raise ValueError(f"the corpus has no {shape_class.value} objects")
    items = [(config, o, j, v) for o in objs for j, v in enumerate(map_views(config, o))]
    raws = _run(_map_item, items, jobs)
    per_object = []
    k = 0
    for _ in objs:
        acc = RawSampleSet(config.threshold)
        for raw in raws[k:k + config.views_per_object]:
            acc = merge(acc, raw)
        k += config.views_per_object
        per_object.append(smooth(acc, config.smoothing))
    meta = {
        "shape_class": shape_class.value,
        "variant": config.candidates.variant.value,
        "scorer": config.scorer.ident,
        "master_seed": config.master_seed,
        "views_per_object": config.views_per_object,
        "objects": len(objs),
        "config_hash": config.config_hash,
    }
    return average_maps(per_object, meta)


def map_for_class(config: ExperimentConfig, maps, shape_class, mode: str = "per_class") -> ViewMapGrid | None:
    """The map the smart strategy uses for an object of ``shape_class``.

    ``maps`` is a single map or a dict keyed by shape class value. ``mode``
    "single" always picks the ``map_class`` map.
    """
    if maps is None or isinstance(maps, ViewMapGrid):
        return maps
    key = ShapeClass(shape_class).value if mode == "per_class" else config.map_class.value
    return maps.get(key)


# Offline evaluation -----------------------------------------------------------------

@dataclass
class StrategyRow:
    strategy: str
    shape_class: str
    trials: int = 0
    detected: int = 0
    after_pruning: int = 0
    positives: int = 0
    true_positives: int = 0
    precisions: list = field(default_factory=list)
    topn: dict = field(default_factory=dict)
    scores: list = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.precisions)) if self.precisions else math.nan

    def curve(self, n_values) -> list[tuple[int, float]]:
        out = []
        for n in n_values:
            vals = [v for v in self.topn.get(n, []) if not math.isnan(v)]
            out.append((n, float(np.mean(vals)) if vals else math.nan))
        return out

    def histogram(self) -> tuple[np.ndarray, np.ndarray]:
        counts, edges = np.histogram(np.asarray(self.scores, dtype=float), bins=SCORE_BINS, range=(0.0, 1.0))
        return edges, counts


@dataclass
class OfflineResult:
    rows: list
    trials: list
    skipped: dict
    n_values: tuple


def _pick_target(config: ExperimentConfig, mesh, cls: str, trial: int):
    ms = config.master_seed
    for attempt in range(config.target_attempts):
        view = sample_view_sphere(1, seed=derive_seed(ms, "target-view", cls, trial, attempt),
                                  radius=config.view_radius)[0]
        _, grasps = detect(config, mesh, viewpoint_to_pose(view), ("target", cls, trial, attempt), score=False)
        positives = [g for g in grasps if g.label]
        if positives:
            rng = np.random.default_rng(derive_seed(ms, "target-pick", cls, trial, attempt))
            return positives[int(rng.integers(len(positives)))]
    return None


def _offline_item(args) -> dict:
    config, cls, trial, smart_map, kinds = args
    ms = config.master_seed
    objs = class_objects(config, cls)
    obj = objs[trial % len(objs)]
    mesh = corpus_meshes(config.corpus)[obj]
    record = {"shape_class": cls, "trial": trial, "object": obj}
    try:
        target = _pick_target(config, mesh, cls, trial)
        if target is None:
            record["skipped"] = "no force-closure grasp found on the object"
            return record
        record["target"] = target.pose.to_row12()
        pool = sample_view_sphere(config.eval_views, seed=derive_seed(ms, "pool", cls, trial),
                                  radius=config.view_radius)
        results = []
        for kind in kinds:
            spec = StrategySpec(kind, map=smart_map, seed=derive_seed(ms, "random-view", cls, trial))
            idx = select_viewpoint_index(spec, target, pool)
            view = pool[idx]
            _, grasps = detect(config, mesh, viewpoint_to_pose(view), ("eval", cls, trial))
            kept = prune_to_neighborhood(grasps, target, config.neighborhood)
            pos = [g for g in kept if g.score >= config.threshold]
            results.append({
                "strategy": StrategyKind(kind).value,
                "view_index": idx,
                "view": [view.azimuth, view.elevation],
                "detected": len(grasps),
                "after_pruning": len(kept),
                "positives": len(pos),
                "true_positives": sum(1 for g in pos if g.label),
                "true_negatives": sum(1 for g in kept if g.score < config.threshold and not g.label),
                "topn": [top_n_accuracy(kept, n) for n in config.n_values],
                "positive_scores": [g.score for g in pos],
            })
        record["strategies"] = results
    except GraspViewError as exc:
        raise PipelineError(f"{cls} trial {trial} (object {obj}): {exc}") from exc
    return record


def run_offline_eval(config: ExperimentConfig, maps, strategies=("smart", "head_on", "random"),
                     shape_classes=(ShapeClass.BOX, ShapeClass.CYLINDER), trials: int | None = None,
                     jobs: int = 1) -> OfflineResult:
    """Compare selection strategies on random force-closure targets.

    Trial ``t`` of a class uses object ``t mod (objects in class)``. A random
    positive grasp (from a random view) is the target; each strategy picks a
    view from a shared pool of ``eval_views`` sphere samples, the scene is
    re-detected from there and detections are pruned to the target's
    neighbourhood. Objects with no positive grasp are skipped and counted.
    """
    kinds = [StrategyKind(s) for s in strategies]
    trials = config.eval_trials if trials is None else trials
    items = []
    for cls in shape_classes:
        cls = ShapeClass(cls).value
        if not class_objects(config, cls):
            continue
        smart_map = map_for_class(config, maps, cls, config.offline_map_mode)
        for t in range(trials):
            items.append((config, cls, t, smart_map, kinds))
    records = _run(_offline_item, items, jobs)
    rows = {}
    skipped = {}
    for rec in records:
        cls = rec["shape_class"]
        if "skipped" in rec:
            skipped[cls] = skipped.get(cls, 0) + 1
            log.warning("%s trial %d: %s", cls, rec["trial"], rec["skipped"])
            continue
        for res in rec["strategies"]:
            row = rows.setdefault((res["strategy"], cls), StrategyRow(res["strategy"], cls))
            row.trials += 1
            row.detected += res["detected"]
            row.after_pruning += res["after_pruning"]
            row.positives += res["positives"]
            row.true_positives += res["true_positives"]
            if res["positives"]:
                row.precisions.append(res["true_positives"] / res["positives"])
            for n, v in zip(config.n_values, res["topn"]):
                row.topn.setdefault(n, []).append(v)
            row.scores.extend(res["positive_scores"])
    ordered = [rows[(k.value, ShapeClass(c).value)] for c in shape_classes for k in kinds
               if (k.value, ShapeClass(c).value) in rows]
    return OfflineResult(ordered, records, skipped, config.n_values)


# Sequence evaluation ----------------------------------------------------------------

@dataclass
class SequenceRow:
    order: str
    trials: int = 0
    successes: int = 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else math.nan


@dataclass
class SequenceResult:
    rows: list
    traces: list


def alignment_pose(config: ExperimentConfig, g) -> Pose:
    """Camera straight down the grasp's approach axis, ``alignment_distance`` away."""
    eye = g.position + config.alignment_distance * g.approach
    try:
        return look_at(eye, g.position, (0.0, 0.0, 1.0))
    except GimbalDegenerate:
        return look_at(eye, g.position, (1.0, 0.0, 0.0))


def _view_record(stage: str, cam_pose: Pose, n_candidates: int, grasp) -> dict:
    return {
        "stage": stage,
        "camera": cam_pose.translation.tolist(),
        "candidates": n_candidates,
        "grasp": grasp.pose.to_row12() if grasp is not None else None,
    }


def _sequence_item(args) -> list[dict]:
    config, trial, maps, orders = args
    ms = config.master_seed
    meshes = corpus_meshes(config.corpus)
    obj = trial % len(meshes)
    mesh = meshes[obj]
    cls = mesh.shape_class.value
    mu = config.scorer.mu
    try:
        v1 = sample_view_sphere(1, seed=derive_seed(ms, "seq-v1", trial), radius=config.view_radius)[0]
        pose1 = viewpoint_to_pose(v1)
        _, det1 = detect(config, mesh, pose1, ("seq1", trial), scorer=config.sequence_scorer)
        rec1 = _view_record("random", pose1, len(det1), None)
        if not det1:
            return [{"trial": trial, "object": obj, "order": o.value, "views": [rec1], "success": False,
                     "reason": "no candidates in the first view"} for o in orders]
        g1 = rank_by_score(det1)[0]
        rec1["grasp"] = g1.pose.to_row12()
        stages = {}

        def smart_stage():
            if "v2" not in stages:
                pool = sample_view_sphere(config.eval_views, seed=derive_seed(ms, "seq-pool", trial),
                                          radius=config.view_radius)
                spec = StrategySpec(StrategyKind.SMART, map=map_for_class(config, maps, cls, config.sequence_map_mode))
                view = pool[select_viewpoint_index(spec, g1, pool)]
                pose2 = viewpoint_to_pose(view)
                _, det2 = detect(config, mesh, pose2, ("seq2", trial), region=(g1.position, config.refine_radius),
                                 scorer=config.sequence_scorer)
                g2 = rank_by_score(det2)[0] if det2 else g1
                stages["v2"] = (g2, _view_record("smart", pose2, len(det2), g2))
            return stages["v2"]

        def align_stage(key, g):
            if key not in stages:
                pose3 = alignment_pose(config, g)
                cloud = render_cloud([(mesh, IDENTITY)], config.camera, pose3,
                                     derive_seed(ms, "render", "seq3", key, trial))
                try:
                    g3 = alignment_refine(cloud, g, config.hand, config.candidates, config.refine_radius,
                                          derive_seed(ms, "cand", "seq3", key, trial),
                                          config.neighborhood.finger_swap)
                    n = 1
                except NoCandidatesFound:
                    g3, n = g, 0
                stages[key] = (g3, _view_record("alignment", pose3, n, g3))
            return stages[key]

        out = []
        for order in orders:
            views = [rec1]
            g = g1
            if order in (SequenceOrder.V1_V2, SequenceOrder.V1_V2_V3):
                g, rec = smart_stage()
                views.append(rec)
            if order in (SequenceOrder.V1_V3, SequenceOrder.V1_V2_V3):
                key = "after_v2" if order is SequenceOrder.V1_V2_V3 else "after_v1"
                g, rec = align_stage(key, g)
                views.append(rec)
            success = bool(label_grasps(mesh, IDENTITY, [g], config.hand, mu)[0])
            out.append({"trial": trial, "object": obj, "order": order.value, "views": views, "success": success})
        return out
    except GraspViewError as exc:
        raise PipelineError(f"sequence trial {trial} (object {obj}): {exc}") from exc


def run_sequence_eval(config: ExperimentConfig, maps, orders=tuple(SequenceOrder), trials: int | None = None,
                      jobs: int = 1) -> SequenceResult:
    """Simulated random / smart / alignment view sequences on single-object scenes.

    Detections are scored with ``config.sequence_scorer``; the smart view uses
    the map as built (with ``config.scorer``).

    Trial ``t`` uses corpus object ``t mod (corpus size)``. View 1 is random
    and its best-scored detection is the target. View 2 is the smart view;
    detection there is restricted to a ball of ``refine_radius`` around the
    target and its best-scored grasp replaces the target. View 3 looks down
    the current grasp's approach axis and snaps to the best-aligned
    candidate. The final grasp succeeds iff it is force closure on the mesh.
    All orders of one trial share their random streams.
    """
    trials = config.sequence_trials if trials is None else trials
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if isinstance(orders, (str, SequenceOrder)):
        orders = (orders,)
    orders = tuple(SequenceOrder(o) for o in orders)
    per_trial = _run(_sequence_item, [(config, t, maps, orders) for t in range(trials)], jobs)
    rows = {o.value: SequenceRow(o.value) for o in orders}
    traces = []
    for recs in per_trial:
        for rec in recs:
            row = rows[rec["order"]]
            row.trials += 1
            row.successes += int(rec["success"])
            traces.append(rec)
    return SequenceResult([rows[o.value] for o in orders], traces)
