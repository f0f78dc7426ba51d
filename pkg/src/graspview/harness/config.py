"""Experiment configuration: TOML loading, canonical hashing and derived seeds."""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import sys
import zlib
from dataclasses import dataclass, field

import numpy as np

from graspview.errors import ConfigError
from graspview.geometry import ShapeClass
from graspview.grasping import CandidateParams, HandGeometry, ScorerKind, ScorerSpec
from graspview.harness.corpus import CorpusSpec
from graspview.selection import ALIGNMENT_RADIUS, NeighborhoodSpec
from graspview.simcam import CameraModel
from graspview.viewmap import DEFAULT_THRESHOLD, SmoothingParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MAP_MODES = ("single", "per_class")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    camera: CameraModel = field(default_factory=CameraModel)
    hand: HandGeometry = field(default_factory=HandGeometry)
    candidates: CandidateParams = field(default_factory=CandidateParams)
    # Maps and the offline comparison use ``scorer``; the simulated view
    # sequence detects with ``sequence_scorer``, a score computed from the
    # cloud alone.
    scorer: ScorerSpec = field(default_factory=ScorerSpec)
    sequence_scorer: ScorerSpec = field(default_factory=lambda: ScorerSpec(kind=ScorerKind.GEOMETRIC))
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    neighborhood: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)
    views_per_object: int = 80
    # Size of the viewpoint pool the strategies choose from in evaluation.
    eval_views: int = 600
    eval_trials: int = 50
    n_values: tuple = (1, 5, 10, 25, 50)
    threshold: float = DEFAULT_THRESHOLD
    # "single": one map (of map_class) for every object; "per_class": each class its own.
    # Offline evaluation knows the target's shape class; the view sequence uses one map.
    offline_map_mode: str = "per_class"
    sequence_map_mode: str = "single"
    map_class: ShapeClass = ShapeClass.BOX
    view_radius: float = 0.4
    target_attempts: int = 5
    refine_radius: float = ALIGNMENT_RADIUS
    alignment_distance: float = 0.25
    sequence_trials: int = 500
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "map_class", ShapeClass(self.map_class))
        if self.views_per_object < 1 or self.eval_views < 1:
            raise ValueError("views_per_object and eval_views must be >= 1")
        if self.eval_trials < 0 or self.sequence_trials < 0 or self.target_attempts < 1:
            raise ValueError("trial counts must be non-negative and target_attempts >= 1")
        if not self.n_values or min(self.n_values) < 1:
            raise ValueError("n_values must be a non-empty list of counts >= 1")
        if self.offline_map_mode not in MAP_MODES or self.sequence_map_mode not in MAP_MODES:
            raise ValueError(f"map modes must be one of {MAP_MODES}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError("threshold must lie in [0, 1]")
        if not (self.view_radius > 0 and self.refine_radius > 0 and self.alignment_distance > 0):
            raise ValueError("radii and distances must be positive")
        if not (0 <= self.master_seed < 2 ** 64):
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    def map_classes(self) -> list[str]:
        """Shape classes whose maps the evaluations need."""
        if "per_class" in (self.offline_map_mode, self.sequence_map_mode):
            return [c.value for c in ShapeClass]
        return [self.map_class.value]

    def with_seed(self, seed: int) -> ExperimentConfig:
        return dataclasses.replace(self, master_seed=int(seed))

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def canonical_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, so equivalent configs hash alike."""
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, np.generic):
        return x.item()
    return x


_SECTIONS = {
    "corpus": CorpusSpec,
    "camera": CameraModel,
    "hand": HandGeometry,
    "candidates": CandidateParams,
    "scorer": ScorerSpec,
    "sequence_scorer": ScorerSpec,
    "smoothing": SmoothingParams,
    "neighborhood": NeighborhoodSpec,
}


def _build(cls, table: dict, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(unknown)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    kwargs = {}
    top_known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, value in data.items():
        if key not in top_known:
            raise ConfigError(f"unknown key: {key}")
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def _key_word(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


def derive_seed(master_seed: int, *keys) -> int:
    """Independent 64-bit seed for the stream named by ``keys``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key_word(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_seeds(master_seed: int, n: int, *keys) -> np.ndarray:
    """``n`` 32-bit seeds for per-item streams, e.g. one per grasp."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key_word(k) for k in keys))
    return ss.generate_state(n) if n else np.zeros(0, dtype=np.uint32)
