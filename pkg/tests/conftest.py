"""Shared fixtures: tiny-tile backends, marker painting, oracle helpers."""

import numpy as np
import pytest

from scopeloop.backends import (
    InferenceBackend,
    ModelDescriptor,
    SoftmaxVector,
    Task,
)
from scopeloop.frames import Frame, FrameSource, PixelFormat, frame_from_array
from scopeloop.registry import builtin_backend

TILE = 64  # small tiles keep unit tests fast; geometry is size-free


def make_frame(width, height, color=(0, 0, 0), fmt=PixelFormat.RGB,
               source_id="test") -> Frame:
    channels = fmt.bytes_per_pixel
    arr = np.zeros((height, width, channels), np.uint8)
    arr[..., :3] = _native(color, fmt)
    if channels == 4:
        arr[..., 3] = 255
    return frame_from_array(arr, fmt, source_id)


def _native(rgb, fmt):
    if fmt is PixelFormat.RGB:
        return rgb
    r, g, b = rgb
    return (b, g, r)


def paint_rect(frame: Frame, x, y, w, h, rgb):
    """Stamp a solid color rectangle (RGB semantics) onto a frame in place."""
    frame.pixels[y:y + h, x:x + w, :3] = _native(rgb, frame.format)


def paint_marker(frame: Frame, x, y, size=8):
    paint_rect(frame, x, y, size, size, (255, 0, 255))


@pytest.fixture
def quadrant_backend():
    return builtin_backend(ModelDescriptor(
        id="quadrant", task=Task.CLASSIFICATION, tile_size=TILE,
        input_format="RGB"))


@pytest.fixture
def marker_backend():
    return builtin_backend(ModelDescriptor(
        id="marker-detect", task=Task.DETECTION, tile_size=TILE,
        input_format="RGB"))


@pytest.fixture
def ki67_backend():
    return builtin_backend(ModelDescriptor(
        id="marker-ki67", task=Task.SEGMENTATION, tile_size=TILE,
        input_format="BGR"))


class ConstantClassifier(InferenceBackend):
    """Zero-cost adapter returning a fixed distribution."""

    reentrant = True

    def __init__(self, tile_size=TILE, probs=(0.7, 0.2, 0.1),
                 model_id="constant"):
        super().__init__(ModelDescriptor(
            id=model_id, task=Task.CLASSIFICATION, tile_size=tile_size,
            input_format="RGB"))
        self._vector = SoftmaxVector(
            probs=probs, class_names=tuple(f"c{i}" for i in range(len(probs))))
        self.closed = False

    def classify(self, tile):
        return self._vector

    def close(self):
        self.closed = True


class FailingBackend(InferenceBackend):
    def __init__(self, tile_size=TILE):
        super().__init__(ModelDescriptor(
            id="failing", task=Task.CLASSIFICATION, tile_size=tile_size,
            input_format="RGB"))

    def classify(self, tile):
        raise RuntimeError("injected adapter failure")


class ListSource(FrameSource):
    """Replays an in-memory frame list, cycling, with optional pacing."""

    def __init__(self, frames, interval_s: float = 0.0):
        super().__init__()
        self._frames = list(frames)
        self._index = 0
        self._interval_s = interval_s

    def next_frame(self) -> Frame:
        import time

        self._check_open()
        if self._interval_s:
            time.sleep(self._interval_s)
        base = self._frames[self._index % len(self._frames)]
        self._index += 1
        return frame_from_array(base.pixels, base.format, base.source_id,
                                timestamp_ns=self._stamp())


def nms_oracle(detections, radius: float):
    """Brute-force reference: full pairwise matrix + the documented greedy
    rule (descending score, lexicographic centroid ties, strict < radius)."""
    n = len(detections)
    if n == 0:
        return []
    cents = np.array([d.centroid for d in detections], dtype=np.float64)
    order = sorted(
        range(n),
        key=lambda i: (-detections[i].score, cents[i, 0], cents[i, 1]),
    )
    diff = cents[:, None, :] - cents[None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    r2 = float(radius) * float(radius)
    kept = np.zeros(n, dtype=bool)
    for i in order:
        if not np.any(d2[i, kept] < r2):
            kept[i] = True
    return [detections[i] for i in range(n) if kept[i]]


def random_detections(rng, count, field=4096.0):
    from scopeloop.backends import Box, Detection

    out = []
    for _ in range(count):
        x = float(rng.uniform(0, field))
        y = float(rng.uniform(0, field))
        w = float(rng.uniform(4, 40))
        h = float(rng.uniform(4, 40))
        score = float(rng.uniform(0, 1))
        out.append(Detection(box=Box(x, y, w, h), class_id=1, score=score))
    return out
