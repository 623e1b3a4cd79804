"""Per-frame analysis pipelines: tile, call the adapter, merge.

Merging rules:

* classification — per-class arithmetic mean of the tile softmax vectors
  (``math.fsum`` per class, so the result is independent of tile order),
  prediction = argmax with lowest-index tie-break;
* detection — tile detections translated to frame coordinates, then greedy
  distance NMS: walk candidates in descending score (ties: lexicographic
  centroid (x, y)); a kept detection suppresses every later candidate whose
  centroid lies strictly within ``radius`` pixels. Threshold filtering is
  applied after suppression so survivor identity is stable as the
  threshold moves.
* Ki-67 — strict-grid tiles, masks translated per tile, instances counted
  per label with no cross-tile dedup (a nucleus split by a tile boundary
  is deliberately counted in both tiles).
"""

import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .backends import (
    Detection,
    InferenceBackend,
    MaskLabel,
    SoftmaxVector,
    Task,
    classify_tile,
    detect_tile,
    segment_tile,
)
from .frames import Frame, PixelFormat, convert_format
from .tiling import (
    DEFAULT_DETECTION_OVERLAP,
    TilePlan,
    crop,
    plan_classification,
    plan_detection,
    plan_segmentation,
    upscale_if_undersized,
)

# query_ball_point uses a closed ball; pad the query radius so boundary
# points are never missed, then apply our own strict < comparison.
_QUERY_PAD = 1e-6


class Band(Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


@dataclass(frozen=True)
class NmsConfig:
    radius: float = 25.0
    high_threshold: float = 0.7
    low_threshold: float = 0.4

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0.0 <= self.low_threshold < self.high_threshold <= 1.0:
            raise ValueError("need 0 <= low < high <= 1")


def band_for_score(score: float, config: NmsConfig = NmsConfig()) -> Band:
    if score > config.high_threshold:
        return Band.HIGH
    if score > config.low_threshold:
        return Band.MEDIUM
    return Band.LOW


@dataclass(frozen=True)
class ClassificationResult:
    mean_probs: SoftmaxVector
    predicted: int
    tile_count: int
    latency_ms: float
    frame: Frame = field(repr=False)
    plan: TilePlan = field(repr=False)

    @property
    def predicted_name(self) -> str:
        return self.mean_probs.class_names[self.predicted]


@dataclass(frozen=True)
class DetectionResult:
    detections: tuple
    bands: tuple  # parallel to detections
    threshold_applied: float
    raw_count: int  # pre-NMS candidate count
    tile_count: int
    latency_ms: float
    frame: Frame = field(repr=False)
    plan: TilePlan = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.detections)


@dataclass(frozen=True)
class Ki67Result:
    positive: int
    negative: int
    index: float | None
    masks: tuple
    tile_count: int
    latency_ms: float
    frame: Frame = field(repr=False)
    plan: TilePlan = field(repr=False)


def mean_pool(vectors) -> SoftmaxVector:
    """Arithmetic mean of softmax vectors; exact under tile reordering."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("cannot pool zero vectors")
    names = vectors[0].class_names
    for v in vectors[1:]:
        if v.class_names != names:
            raise ValueError("cannot pool vectors with different class sets")
    n = len(vectors)
    probs = tuple(
        math.fsum(v.probs[c] for v in vectors) / n for c in range(len(names))
    )
    return SoftmaxVector(probs=probs, class_names=names)


def distance_nms(candidates, config: NmsConfig = NmsConfig()) -> list:
    """Greedy centroid-distance suppression; ≡ the brute-force rule.

    Survivors are returned in their original input order.
    """
    n = len(candidates)
    if n == 0:
        return []
    cents = np.array([d.centroid for d in candidates], dtype=np.float64)
    order = sorted(
        range(n),
        key=lambda i: (-candidates[i].score, cents[i, 0], cents[i, 1]),
    )
    tree = cKDTree(cents)
    r = float(config.radius)
    r2 = r * r
    kept = np.zeros(n, dtype=bool)
    for i in order:
        suppressed = False
        for j in tree.query_ball_point(cents[i], r + _QUERY_PAD):
            if j == i or not kept[j]:
                continue
            dx = cents[i, 0] - cents[j, 0]
            dy = cents[i, 1] - cents[j, 1]
            if dx * dx + dy * dy < r2:
                suppressed = True
                break
        if not suppressed:
            kept[i] = True
    return [candidates[i] for i in range(n) if kept[i]]


_FORMAT_BY_NAME = {"RGB": PixelFormat.RGB, "BGR": PixelFormat.BGR}


def _prepare(frame: Frame, backend: InferenceBackend):
    """Convert to the model's channel order and upscale if undersized."""
    target = _FORMAT_BY_NAME[backend.descriptor.input_format]
    frame = convert_format(frame, target)
    return upscale_if_undersized(frame, backend.descriptor.tile_size)


def run_classification(frame: Frame, backend: InferenceBackend) -> ClassificationResult:
    start = time.perf_counter()
    work, scale = _prepare(frame, backend)
    t = backend.descriptor.tile_size
    plan = plan_classification(work.width, work.height, t, scale=scale)
    vectors = [classify_tile(backend, crop(work, rect)) for rect in plan.tiles]
    pooled = mean_pool(vectors)
    return ClassificationResult(
        mean_probs=pooled,
        predicted=pooled.argmax(),
        tile_count=len(plan.tiles),
        latency_ms=(time.perf_counter() - start) * 1000.0,
        frame=work,
        plan=plan,
    )


def run_detection(frame: Frame, backend: InferenceBackend,
                  overlap: int = DEFAULT_DETECTION_OVERLAP,
                  threshold: float = 0.0,
                  config: NmsConfig = NmsConfig()) -> DetectionResult:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    start = time.perf_counter()
    work, scale = _prepare(frame, backend)
    t = backend.descriptor.tile_size
    plan = plan_detection(work.width, work.height, t, overlap=overlap, scale=scale)
    candidates = []
    for rect in plan.tiles:
        for det in detect_tile(backend, crop(work, rect)):
            candidates.append(det.translated(rect.x, rect.y))
    survivors = [d for d in distance_nms(candidates, config)
                 if d.score >= threshold]
    return DetectionResult(
        detections=tuple(survivors),
        bands=tuple(band_for_score(d.score, config) for d in survivors),
        threshold_applied=threshold,
        raw_count=len(candidates),
        tile_count=len(plan.tiles),
        latency_ms=(time.perf_counter() - start) * 1000.0,
        frame=work,
        plan=plan,
    )


def run_ki67(frame: Frame, backend: InferenceBackend) -> Ki67Result:
    start = time.perf_counter()
    work, scale = _prepare(frame, backend)
    t = backend.descriptor.tile_size
    plan = plan_segmentation(work.width, work.height, t, scale=scale)
    masks = []
    for rect in plan.tiles:
        for mask in segment_tile(backend, crop(work, rect)):
            masks.append(mask.translated(rect.x, rect.y))
    positive = sum(1 for m in masks if m.label is MaskLabel.POSITIVE)
    negative = sum(1 for m in masks if m.label is MaskLabel.NEGATIVE)
    total = positive + negative
    return Ki67Result(
        positive=positive,
        negative=negative,
        index=(positive / total) if total else None,
        masks=tuple(masks),
        tile_count=len(plan.tiles),
        latency_ms=(time.perf_counter() - start) * 1000.0,
        frame=work,
        plan=plan,
    )


def analyze_frame(frame: Frame, backend: InferenceBackend, *,
                  overlap: int = DEFAULT_DETECTION_OVERLAP,
                  threshold: float = 0.0,
                  config: NmsConfig = NmsConfig()):
    """Dispatch to the pipeline matching the backend's task."""
    task = backend.descriptor.task
    if task is Task.CLASSIFICATION:
        return run_classification(frame, backend)
    if task is Task.DETECTION:
        return run_detection(frame, backend, overlap=overlap,
                             threshold=threshold, config=config)
    return run_ki67(frame, backend)
