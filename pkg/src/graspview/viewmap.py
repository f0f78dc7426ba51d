"""Viewpoint-quality maps on an (azimuth, elevation) grid in grasp frames.

Viewpoints are projected into each detected grasp's frame and reduced to the
direction toward the camera. Samples carry the grasp's score and ground-truth
label and are splatted with an isotropic Gaussian onto a square angular grid,
giving five channels: candidate density, true-positive density, false-positive
density, accuracy and true-positives-minus-false-positives. Densities are
unnormalised expected counts.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from graspview import kernels
from graspview.errors import CorruptFile, FormatVersionMismatch, ThresholdMismatch, ZeroVector
from graspview.geometry import Pose, invert, transform_point

CHANNELS = ("candidate_density", "tp_density", "fp_density", "accuracy", "tp_minus_fp")
DEFAULT_THRESHOLD = 0.5
# Accuracy is undefined where the kernel mass of all samples is below this.
MIN_KERNEL_MASS = 1e-12

MAGIC = b"GVMAP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<5sIddddIIIQI")


def project_viewpoint(view_position, grasp_pose: Pose) -> np.ndarray:
    """Camera position expressed in the grasp frame."""
    return transform_point(invert(grasp_pose), view_position)


def direction_to_angles(v) -> tuple[float, float]:
    """(azimuth, elevation) of the direction ``v`` given in grasp coordinates.

    Elevation is measured from the approach/closing plane toward z; azimuth
    from the approach axis toward the closing axis. At the poles azimuth is 0.

    Raises
    ------
    ZeroVector
        If ``|v| <= 1e-9``.
    """
    v = np.asarray(v, dtype=float).reshape(3)
    norm = float(np.linalg.norm(v))
    if not norm > 1e-9:
        raise ZeroVector("cannot take the direction of a zero vector")
    x, y, z = v / norm
    elevation = math.asin(min(1.0, max(-1.0, z)))
    if math.hypot(x, y) < 1e-15:
        return 0.0, elevation
    azimuth = math.atan2(y, x)
    if azimuth <= -math.pi:
        azimuth = math.pi
    return azimuth, elevation


@dataclass(frozen=True)
class ViewSample:
    azimuth: float
    elevation: float
    score: float
    label: bool

    def __post_init__(self):
        if not (math.isfinite(self.azimuth) and math.isfinite(self.elevation)):
            raise ValueError("angles must be finite")
        if not (-math.pi < self.azimuth <= math.pi):
            raise ValueError("azimuth must lie in (-pi, pi]")
        if not (-0.5 * math.pi <= self.elevation <= 0.5 * math.pi):
            raise ValueError("elevation must lie in [-pi/2, pi/2]")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError("score must lie in [0, 1]")


def view_samples(view_position, grasps) -> list[ViewSample]:
    """One sample per scored and labelled grasp seen from ``view_position``.

    Grasps whose origin coincides with the viewpoint are skipped.
    """
    out = []
    for g in grasps:
        try:
            az, el = direction_to_angles(project_viewpoint(view_position, g.pose))
        except ZeroVector:
            continue
        out.append(ViewSample(az, el, g.score, bool(g.label)))
    return out


@dataclass(frozen=True)
class SmoothingParams:
    variance: float = 0.2
    spacing: float = 0.05
    extent: float = 1.05

    def __post_init__(self):
        if not (self.variance > 0 and self.spacing > 0 and self.extent > 0):
            raise ValueError("variance, spacing and extent must be positive")
        ratio = self.extent / self.spacing
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("extent must be a whole multiple of spacing")

    @property
    def cells_per_axis(self) -> int:
        return 2 * int(round(self.extent / self.spacing)) + 1

    @property
    def axis(self) -> np.ndarray:
        """Cell centres along either axis, symmetric about 0."""
        half = self.cells_per_axis // 2
        return np.arange(-half, half + 1) * self.spacing


@dataclass(frozen=True)
class RawSampleSet:
    """Classified samples awaiting smoothing; merge is concatenation."""

    threshold: float = DEFAULT_THRESHOLD
    azimuth: np.ndarray = field(default_factory=lambda: np.zeros(0))
    elevation: np.ndarray = field(default_factory=lambda: np.zeros(0))
    score: np.ndarray = field(default_factory=lambda: np.zeros(0))
    label: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __len__(self):
        return len(self.score)

    @property
    def predicted(self) -> np.ndarray:
        return self.score >= self.threshold

    @property
    def counts(self) -> dict[str, int]:
        pos, lab = self.predicted, self.label
        return {
            "tp": int(np.count_nonzero(pos & lab)),
            "fp": int(np.count_nonzero(pos & ~lab)),
            "tn": int(np.count_nonzero(~pos & ~lab)),
            "fn": int(np.count_nonzero(~pos & lab)),
        }


def accumulate(samples, threshold: float = DEFAULT_THRESHOLD) -> RawSampleSet:
    samples = list(samples)
    return RawSampleSet(
        float(threshold),
        np.array([s.azimuth for s in samples], dtype=float),
        np.array([s.elevation for s in samples], dtype=float),
        np.array([s.score for s in samples], dtype=float),
        np.array([bool(s.label) for s in samples], dtype=bool),
    )


def merge(a: RawSampleSet, b: RawSampleSet) -> RawSampleSet:
    if a.threshold != b.threshold:
        raise ThresholdMismatch(f"thresholds differ: {a.threshold} vs {b.threshold}")
    return RawSampleSet(
        a.threshold,
        np.concatenate([a.azimuth, b.azimuth]),
        np.concatenate([a.elevation, b.elevation]),
        np.concatenate([a.score, b.score]),
        np.concatenate([a.label, b.label]),
    )


@dataclass(frozen=True)
class ViewMapGrid:
    """Five smoothed channels on a square grid, indexed ``[channel, elevation, azimuth]``."""

    params: SmoothingParams
    threshold: float
    channels: np.ndarray
    sample_count: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.params.cells_per_axis
        if self.channels.shape != (len(CHANNELS), g, g):
            raise ValueError(f"channels must have shape {(len(CHANNELS), g, g)}")

    @property
    def axis(self) -> np.ndarray:
        return self.params.axis

    def channel(self, name: str) -> np.ndarray:
        return self.channels[CHANNELS.index(name)]

    def interpolate(self, name: str, azimuth: float, elevation: float) -> float:
        """Bilinear lookup; ``-inf`` outside the grid extent or on undefined cells."""
        ext = self.params.extent
        if not (-ext <= azimuth <= ext and -ext <= elevation <= ext):
            return -math.inf
        data = self.channel(name)
        g = data.shape[0]
        fx = (azimuth + ext) / self.params.spacing
        fy = (elevation + ext) / self.params.spacing
        i0 = min(int(math.floor(fx)), g - 2)
        j0 = min(int(math.floor(fy)), g - 2)
        tx, ty = fx - i0, fy - j0
        patch = data[j0:j0 + 2, i0:i0 + 2]
        if not np.all(np.isfinite(patch)):
            return -math.inf
        # a + t (b - a) returns a exactly when a == b, so flat regions tie exactly
        top = patch[0, 0] + tx * (patch[0, 1] - patch[0, 0])
        bot = patch[1, 0] + tx * (patch[1, 1] - patch[1, 0])
        return float(top + ty * (bot - top))

    def scaled(self, factor: float) -> ViewMapGrid:
        """Density channels multiplied by ``factor``; accuracy untouched."""
        ch = self.channels.copy()
        for name in ("candidate_density", "tp_density", "fp_density"):
            ch[CHANNELS.index(name)] *= factor
        ch[4] = ch[1] - ch[2]
        return ViewMapGrid(self.params, self.threshold, ch, self.sample_count, dict(self.meta))

    def identical(self, other: ViewMapGrid) -> bool:
        """Bit-exact equality, NaN cells included."""
        return (
            self.params == other.params
            and self.threshold == other.threshold
            and self.sample_count == other.sample_count
            and self.meta == other.meta
            and self.channels.tobytes() == other.channels.tobytes()
        )


def _kernel_sums(raw: RawSampleSet, p: SmoothingParams) -> np.ndarray:
    """Splat (all, tp, fp, correct) weights; samples summed in sorted order."""
    order = np.lexsort((raw.label, raw.score, raw.elevation, raw.azimuth))
    pos = raw.predicted[order]
    lab = raw.label[order]
    weights = np.column_stack([
        np.ones(len(order)),
        (pos & lab).astype(float),
        (pos & ~lab).astype(float),
        (pos == lab).astype(float),
    ])
    return kernels.gaussian_splat(
        np.ascontiguousarray(raw.azimuth[order]), np.ascontiguousarray(raw.elevation[order]),
        np.ascontiguousarray(weights), np.ascontiguousarray(p.axis), p.variance,
    )


def smooth(raw: RawSampleSet, p: SmoothingParams = SmoothingParams(), meta: dict | None = None) -> ViewMapGrid:
    """Gaussian-smoothed channels of ``raw`` on the grid of ``p``.

    Each sample adds ``exp(-|d|^2 / (2 variance))`` to every cell, where the
    azimuth part of ``d`` wraps to (-pi, pi]. Accuracy is the kernel-weighted
    fraction of correctly classified samples and NaN where the total kernel
    mass is below ``MIN_KERNEL_MASS``.
    """
    cand, tp, fp, correct = _kernel_sums(raw, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = np.where(cand >= MIN_KERNEL_MASS, correct / cand, np.nan)
    acc = np.where(np.isfinite(acc), np.clip(acc, 0.0, 1.0), np.nan)
    channels = np.stack([cand, tp, fp, acc, tp - fp])
    return ViewMapGrid(p, raw.threshold, channels, len(raw), dict(meta or {}))


def average_maps(maps: list[ViewMapGrid], meta: dict | None = None) -> ViewMapGrid:
    """Equal-weight channel mean over maps; accuracy averages defined cells only."""
    if not maps:
        raise ValueError("need at least one map")
    first = maps[0]
    for m in maps[1:]:
        if m.params != first.params:
            raise ValueError("maps use different smoothing parameters")
        if m.threshold != first.threshold:
            raise ThresholdMismatch("maps use different thresholds")
    stack = np.stack([m.channels for m in maps])
    dens = stack[:, :3].sum(axis=0) / len(maps)
    acc_stack = stack[:, 3]
    defined = np.isfinite(acc_stack)
    n_def = defined.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = np.where(n_def > 0, np.where(defined, acc_stack, 0.0).sum(axis=0) / n_def, np.nan)
    channels = np.stack([dens[0], dens[1], dens[2], acc, dens[1] - dens[2]])
    total = sum(m.sample_count for m in maps)
    return ViewMapGrid(first.params, first.threshold, channels, total, dict(meta or first.meta))


# Persistence ---------------------------------------------------------------------

def save_map(m: ViewMapGrid, path) -> None:
    """Binary little-endian map file ending in a CRC32 of everything before it."""
    meta = json.dumps(m.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    g = m.params.cells_per_axis
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, m.params.spacing, m.params.extent, m.params.variance,
                        m.threshold, g, g, len(CHANNELS), m.sample_count, len(meta))
    body = head + meta + np.ascontiguousarray(m.channels, dtype="<f8").tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_map(path) -> ViewMapGrid:
    """Read a map written by ``save_map``.

    Raises
    ------
    CorruptFile
        Bad magic, truncation, inconsistent sizes or checksum mismatch.
    FormatVersionMismatch
        The file was written by an unsupported format version.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise CorruptFile(f"{path}: file too short")
    magic, version, spacing, extent, variance, tau, gx, gy, nc, count, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptFile(f"{path}: not a view map file")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise CorruptFile(f"{path}: checksum mismatch")
    expected = _HEADER.size + meta_len + 8 * nc * gx * gy + 4
    if len(data) != expected or nc != len(CHANNELS):
        raise CorruptFile(f"{path}: inconsistent sizes")
    try:
        params = SmoothingParams(variance, spacing, extent)
        meta = json.loads(data[_HEADER.size:_HEADER.size + meta_len].decode("utf-8"))
    except ValueError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    start = _HEADER.size + meta_len
    channels = np.frombuffer(data[start:start + 8 * nc * gx * gy], dtype="<f8").reshape(nc, gy, gx)
    try:
        return ViewMapGrid(params, tau, channels.astype(float), int(count), meta)
    except ValueError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc


def export_csv(m: ViewMapGrid, path, trailer: str | None = None) -> None:
    """One row per cell: azimuth, elevation and the five channels.

    ``trailer`` is appended as a final line when given (e.g. a provenance comment).
    """
    ax = m.axis
    lines = ["azimuth,elevation," + ",".join(CHANNELS)]
    for j, el in enumerate(ax):
        for i, az in enumerate(ax):
            vals = ",".join(repr(float(m.channels[c, j, i])) for c in range(len(CHANNELS)))
            lines.append(f"{float(az)!r},{float(el)!r},{vals}")
    if trailer is not None:
        lines.append(trailer)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
