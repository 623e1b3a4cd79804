"""Inference adapter interface, result types and the shipped mock backends.

Mock backends are first-class citizens: they are pure functions of the tile
bytes, documented below, and give every pipeline property a deterministic
target without trained weights.

* ``quadrant`` classifier — channel-mean rule. Logits are the tile's mean
  red, green and blue values plus ``255 - (max - min)`` of those means
  (a "low saturation" class), divided by 32 and softmaxed.
* ``marker`` detector — finds connected components of pure magenta
  (255, 0, 255) pixels covering at least MIN_MARKER_AREA pixels; each
  becomes one detection with score 0.9.
* ``marker`` segmenter — brown (150, 75, 0) components are positive
  instances, pure blue (0, 0, 255) components negative.
* ``noise`` detector — pseudo-random detections seeded by the SHA-256 of
  the tile bytes; deterministic per tile content.
"""

import hashlib
import math
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import BackendFailure, WrongTileShape

MIN_MARKER_AREA = 4  # px; rejects stray single-pixel color collisions

DETECTOR_MARKER_RGB = (255, 0, 255)
SEGMENTER_POSITIVE_RGB = (150, 75, 0)
SEGMENTER_NEGATIVE_RGB = (0, 0, 255)


class Task(Enum):
    CLASSIFICATION = "classification"
    DETECTION = "detection"
    SEGMENTATION = "segmentation"


class MaskLabel(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class SoftmaxVector:
    """Per-class probability distribution for one tile or one pooled ROI."""

    probs: tuple
    class_names: tuple

    def __post_init__(self):
        if len(self.probs) != len(self.class_names) or len(self.probs) < 2:
            raise ValueError("need one probability per class and >= 2 classes")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {total}, expected 1")

    def argmax(self) -> int:
        # ties break toward the lowest class index
        best = 0
        for i, p in enumerate(self.probs):
            if p > self.probs[best]:
                best = i
        return best


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float


@dataclass(frozen=True)
class Detection:
    """One candidate object: bounding box, class label and confidence."""

    box: Box
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def centroid(self) -> tuple:
        return (self.box.x + self.box.w / 2.0, self.box.y + self.box.h / 2.0)

    def translated(self, dx: float, dy: float) -> "Detection":
        return Detection(
            box=Box(self.box.x + dx, self.box.y + dy, self.box.w, self.box.h),
            class_id=self.class_id,
            score=self.score,
        )


@dataclass(frozen=True)
class InstanceMask:
    """Run-length-encoded binary region, local to its tile origin.

    Each run is (row, col_start, length) relative to ``tile_origin``;
    absolute frame pixels are origin + run coordinates.
    """

    tile_origin: tuple
    runs: tuple
    label: MaskLabel

    def __post_init__(self):
        if not self.runs:
            raise ValueError("mask must be nonempty")
        for row, start, length in self.runs:
            if row < 0 or start < 0 or length < 1:
                raise ValueError(f"bad run {(row, start, length)}")

    @property
    def area(self) -> int:
        return sum(length for _, _, length in self.runs)

    def bbox(self) -> Box:
        rows = [r for r, _, _ in self.runs]
        x1 = min(s for _, s, _ in self.runs)
        x2 = max(s + n for _, s, n in self.runs)
        y1, y2 = min(rows), max(rows) + 1
        ox, oy = self.tile_origin
        return Box(ox + x1, oy + y1, x2 - x1, y2 - y1)

    def translated(self, dx: int, dy: int) -> "InstanceMask":
        ox, oy = self.tile_origin
        return InstanceMask(tile_origin=(ox + dx, oy + dy), runs=self.runs,
                            label=self.label)

    def pixel_indices(self) -> tuple:
        """(rows, cols) absolute index arrays for numpy fancy indexing."""
        ox, oy = self.tile_origin
        rows, cols = [], []
        for row, start, length in self.runs:
            rows.append(np.full(length, oy + row, dtype=np.intp))
            cols.append(np.arange(ox + start, ox + start + length, dtype=np.intp))
        return np.concatenate(rows), np.concatenate(cols)


def mask_from_bool(mask: np.ndarray, label: MaskLabel,
                   origin: tuple = (0, 0)) -> InstanceMask:
    runs = []
    for row in range(mask.shape[0]):
        cols = np.flatnonzero(mask[row])
        if cols.size == 0:
            continue
        breaks = np.flatnonzero(np.diff(cols) > 1)
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks, [cols.size - 1]])
        for s, e in zip(starts, ends):
            runs.append((row, int(cols[s]), int(cols[e] - cols[s] + 1)))
    return InstanceMask(tile_origin=origin, runs=tuple(runs), label=label)


@dataclass(frozen=True)
class ModelDescriptor:
    """Everything needed to locate, load and feed one model."""

    id: str
    task: Task
    tile_size: int
    input_format: str  # "RGB" or "BGR"
    source: str = "builtin"  # builtin | file | remote
    path: str | None = None
    url: str | None = None
    sha256: str | None = None

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValueError(f"tile_size must be >= 1, got {self.tile_size}")
        if self.input_format not in ("RGB", "BGR"):
            raise ValueError(f"input_format must be RGB or BGR, got {self.input_format}")
        if self.source == "file" and not self.path:
            raise ValueError("file source requires a path")
        if self.source == "remote" and not (self.url and self.sha256):
            raise ValueError("remote source requires url and sha256")


class InferenceBackend:
    """Loaded model handle. Immutable after load; ``reentrant`` declares
    whether concurrent inference calls are safe."""

    reentrant = False

    def __init__(self, descriptor: ModelDescriptor):
        self.descriptor = descriptor

    def _check_tile(self, tile: np.ndarray):
        t = self.descriptor.tile_size
        if tile.shape != (t, t, 3) or tile.dtype != np.uint8:
            raise WrongTileShape(
                f"model {self.descriptor.id} expects {t}x{t}x3 uint8 tiles, "
                f"got {tile.shape}/{tile.dtype}"
            )

    def close(self):
        pass


def classify_tile(backend: InferenceBackend, tile: np.ndarray) -> SoftmaxVector:
    backend._check_tile(tile)
    try:
        return backend.classify(tile)
    except WrongTileShape:
        raise
    except Exception as exc:
        raise BackendFailure(f"classifier {backend.descriptor.id} failed: {exc}") from exc


def detect_tile(backend: InferenceBackend, tile: np.ndarray) -> list:
    backend._check_tile(tile)
    try:
        return backend.detect(tile)
    except WrongTileShape:
        raise
    except Exception as exc:
        raise BackendFailure(f"detector {backend.descriptor.id} failed: {exc}") from exc


def segment_tile(backend: InferenceBackend, tile: np.ndarray) -> list:
    backend._check_tile(tile)
    try:
        return backend.segment(tile)
    except WrongTileShape:
        raise
    except Exception as exc:
        raise BackendFailure(f"segmenter {backend.descriptor.id} failed: {exc}") from exc


def _as_rgb(tile: np.ndarray, input_format: str) -> np.ndarray:
    return tile if input_format == "RGB" else tile[:, :, ::-1]


def _color_components(rgb: np.ndarray, color: tuple) -> list:
    """Connected components of exact-color pixels, as (bbox slices, local mask)."""
    match = np.all(rgb == np.asarray(color, dtype=np.uint8), axis=2)
    labels, count = ndimage.label(match)
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        local = labels[sl] == i
        if int(local.sum()) >= MIN_MARKER_AREA:
            out.append((sl, local))
    return out


class QuadrantClassifier(InferenceBackend):
    """Channel-mean mock classifier (rule documented in the module docstring)."""

    reentrant = True
    class_names = ("red_dominant", "green_dominant", "blue_dominant", "low_saturation")
    temperature = 32.0

    def classify(self, tile: np.ndarray) -> SoftmaxVector:
        rgb = _as_rgb(tile, self.descriptor.input_format)
        means = rgb.reshape(-1, 3).mean(axis=0)
        r, g, b = (float(v) for v in means)
        logits = [r, g, b, 255.0 - (max(r, g, b) - min(r, g, b))]
        m = max(logits)
        exps = [math.exp((v - m) / self.temperature) for v in logits]
        total = math.fsum(exps)
        probs = tuple(e / total for e in exps)
        return SoftmaxVector(probs=probs, class_names=self.class_names)


class MarkerDetector(InferenceBackend):
    """Finds pure-magenta fiducial markers; never suppresses duplicates."""

    reentrant = True
    marker_score = 0.9

    def detect(self, tile: np.ndarray) -> list:
        rgb = _as_rgb(tile, self.descriptor.input_format)
        detections = []
        for sl, local in _color_components(rgb, DETECTOR_MARKER_RGB):
            y, x = sl[0].start, sl[1].start
            h, w = local.shape
            detections.append(Detection(
                box=Box(float(x), float(y), float(w), float(h)),
                class_id=1,
                score=self.marker_score,
            ))
        return detections


class MarkerSegmenter(InferenceBackend):
    """Brown fiducial blobs become positive instances, blue ones negative."""

    reentrant = True

    def segment(self, tile: np.ndarray) -> list:
        rgb = _as_rgb(tile, self.descriptor.input_format)
        masks = []
        for color, label in ((SEGMENTER_POSITIVE_RGB, MaskLabel.POSITIVE),
                             (SEGMENTER_NEGATIVE_RGB, MaskLabel.NEGATIVE)):
            for sl, local in _color_components(rgb, color):
                mask = mask_from_bool(local, label)
                # runs are bbox-local; shift to tile-local coordinates
                masks.append(mask.translated(sl[1].start, sl[0].start))
        return masks


class NoiseDetector(InferenceBackend):
    """Pseudo-random detections derived from a hash of the tile content."""

    reentrant = True
    box_size = 24

    def detect(self, tile: np.ndarray) -> list:
        digest = hashlib.sha256(tile.tobytes()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        t = self.descriptor.tile_size
        count = int(rng.integers(0, 12))
        detections = []
        span = max(1, t - self.box_size)
        for _ in range(count):
            x = float(rng.integers(0, span))
            y = float(rng.integers(0, span))
            score = float(rng.uniform(0.05, 1.0))
            detections.append(Detection(
                box=Box(x, y, float(self.box_size), float(self.box_size)),
                class_id=1,
                score=round(score, 6),
            ))
        return detections


class DelayedBackend(InferenceBackend):
    """Wraps another backend and sleeps before each call.

    Simulates heavyweight model latency for benchmarking and for the
    control-plane responsiveness tests.
    """

    def __init__(self, inner: InferenceBackend, delay_s: float):
        super().__init__(inner.descriptor)
        self.inner = inner
        self.delay_s = delay_s
        self.reentrant = inner.reentrant

    def classify(self, tile):
        time.sleep(self.delay_s)
        return self.inner.classify(tile)

    def detect(self, tile):
        time.sleep(self.delay_s)
        return self.inner.detect(tile)

    def segment(self, tile):
        time.sleep(self.delay_s)
        return self.inner.segment(tile)

    def close(self):
        self.inner.close()
