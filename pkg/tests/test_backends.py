import math

import numpy as np
import pytest

from scopeloop.backends import (
    MIN_MARKER_AREA,
    Box,
    Detection,
    InstanceMask,
    MaskLabel,
    ModelDescriptor,
    SoftmaxVector,
    Task,
    classify_tile,
    detect_tile,
    mask_from_bool,
    segment_tile,
)
from scopeloop.errors import BackendFailure, WrongTileShape

from conftest import TILE, make_frame, paint_marker, paint_rect


def rgb_tile(color, size=TILE):
    return make_frame(size, size, color=color).pixels


class TestSoftmaxVector:
    def test_probs_must_sum_to_one(self):
        with pytest.raises(ValueError):
            SoftmaxVector(probs=(0.9, 0.3), class_names=("a", "b"))

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            SoftmaxVector(probs=(1.0,), class_names=("only",))

    def test_argmax_breaks_ties_toward_lowest_index(self):
        vec = SoftmaxVector(probs=(0.25, 0.5, 0.5 - 0.25), class_names=("a", "b", "c"))
        assert vec.argmax() == 1
        tied = SoftmaxVector(probs=(0.4, 0.4, 0.2), class_names=("a", "b", "c"))
        assert tied.argmax() == 0


class TestGeometry:
    def test_detection_centroid(self):
        det = Detection(box=Box(10, 20, 30, 40), class_id=1, score=0.5)
        assert det.centroid == (25.0, 40.0)

    def test_translated_moves_box_only(self):
        det = Detection(box=Box(1, 2, 3, 4), class_id=1, score=0.9)
        moved = det.translated(100, 200)
        assert (moved.box.x, moved.box.y) == (101.0, 202.0)
        assert (moved.box.w, moved.box.h) == (3.0, 4.0)
        assert moved.score == det.score


class TestInstanceMaskRle:
    def test_round_trip_through_pixel_indices(self):
        rng = np.random.default_rng(7)
        bitmap = rng.random((40, 40)) > 0.6
        mask = mask_from_bool(bitmap, MaskLabel.POSITIVE)
        rebuilt = np.zeros_like(bitmap)
        rows, cols = mask.pixel_indices()
        rebuilt[rows, cols] = True
        assert (rebuilt == bitmap).all()
        assert mask.area == int(bitmap.sum())

    def test_translated_shifts_origin(self):
        bitmap = np.zeros((8, 8), bool)
        bitmap[2, 3:6] = True
        mask = mask_from_bool(bitmap, MaskLabel.NEGATIVE)
        shifted = mask.translated(100, 50)
        assert shifted.tile_origin == (100, 50)
        assert shifted.runs == mask.runs
        rows, cols = shifted.pixel_indices()
        assert rows.tolist() == [52, 52, 52]
        assert cols.tolist() == [103, 104, 105]

    def test_bbox(self):
        bitmap = np.zeros((10, 10), bool)
        bitmap[4:7, 2:5] = True
        mask = mask_from_bool(bitmap, MaskLabel.POSITIVE)
        box = mask.bbox()
        assert (box.x, box.y, box.w, box.h) == (2, 4, 3, 3)


class TestQuadrantClassifier:
    def test_pure_red_tile_scores_red_highest(self, quadrant_backend):
        vec = classify_tile(quadrant_backend, rgb_tile((255, 0, 0)))
        assert vec.class_names[vec.argmax()] == "red_dominant"
        assert vec.probs[vec.argmax()] > 0.99

    def test_softmax_matches_hand_computation(self, quadrant_backend):
        # logits for a pure-red tile: [255, 0, 0, 255-(255-0)] / 32
        tile = rgb_tile((255, 0, 0))
        logits = [255 / 32, 0.0, 0.0, (255 - 255) / 32]
        shifted = [x - max(logits) for x in logits]
        exps = [math.exp(x) for x in shifted]
        total = sum(exps)
        expected = [e / total for e in exps]
        vec = classify_tile(quadrant_backend, tile)
        assert vec.probs == pytest.approx(expected, abs=1e-12)

    def test_gray_tile_prefers_low_saturation(self, quadrant_backend):
        vec = classify_tile(quadrant_backend, rgb_tile((128, 128, 128)))
        assert vec.class_names[vec.argmax()] == "low_saturation"

    def test_deterministic(self, quadrant_backend):
        tile = np.random.default_rng(3).integers(0, 256, (TILE, TILE, 3), np.uint8)
        a = classify_tile(quadrant_backend, tile)
        b = classify_tile(quadrant_backend, tile)
        assert a.probs == b.probs

    def test_wrong_shape_rejected(self, quadrant_backend):
        with pytest.raises(WrongTileShape):
            classify_tile(quadrant_backend, np.zeros((TILE, TILE + 1, 3), np.uint8))
        with pytest.raises(WrongTileShape):
            classify_tile(quadrant_backend, np.zeros((TILE, TILE, 3), np.float32))


class TestMarkerDetector:
    def test_blank_tile_detects_nothing(self, marker_backend):
        assert detect_tile(marker_backend, rgb_tile((255, 255, 255))) == []

    def test_single_marker_box_and_score(self, marker_backend):
        frame = make_frame(TILE, TILE, color=(255, 255, 255))
        paint_marker(frame, 10, 12, size=8)
        dets = detect_tile(marker_backend, frame.pixels)
        assert len(dets) == 1
        det = dets[0]
        assert (det.box.x, det.box.y, det.box.w, det.box.h) == (10, 12, 8, 8)
        assert det.score == 0.9
        assert det.class_id == 1

    def test_two_separated_markers(self, marker_backend):
        frame = make_frame(TILE, TILE, color=(0, 0, 0))
        paint_marker(frame, 4, 4, size=6)
        paint_marker(frame, 40, 40, size=6)
        dets = detect_tile(marker_backend, frame.pixels)
        assert len(dets) == 2

    def test_blob_below_min_area_ignored(self, marker_backend):
        frame = make_frame(TILE, TILE, color=(0, 0, 0))
        paint_rect(frame, 5, 5, 1, MIN_MARKER_AREA - 1, (255, 0, 255))
        assert detect_tile(marker_backend, frame.pixels) == []
        paint_rect(frame, 20, 20, 1, MIN_MARKER_AREA, (255, 0, 255))
        assert len(detect_tile(marker_backend, frame.pixels)) == 1

    def test_near_magenta_is_not_a_marker(self, marker_backend):
        frame = make_frame(TILE, TILE, color=(254, 0, 255))
        assert detect_tile(marker_backend, frame.pixels) == []


class TestMarkerSegmenter:
    def test_brown_and_blue_blobs_get_labels(self, ki67_backend):
        # backend consumes BGR tiles; build in RGB then flip channels
        frame = make_frame(TILE, TILE, color=(255, 255, 255))
        paint_rect(frame, 5, 5, 10, 10, (150, 75, 0))    # positive stain
        paint_rect(frame, 30, 30, 6, 6, (0, 0, 255))     # negative stain
        bgr = frame.pixels[..., ::-1].copy()
        masks = segment_tile(ki67_backend, bgr)
        labels = sorted(m.label.name for m in masks)
        assert labels == ["NEGATIVE", "POSITIVE"]
        by_label = {m.label: m for m in masks}
        assert by_label[MaskLabel.POSITIVE].area == 100
        assert by_label[MaskLabel.NEGATIVE].area == 36
        pos_box = by_label[MaskLabel.POSITIVE].bbox()
        assert (pos_box.x, pos_box.y, pos_box.w, pos_box.h) == (5, 5, 10, 10)

    def test_small_specks_ignored(self, ki67_backend):
        frame = make_frame(TILE, TILE, color=(255, 255, 255))
        paint_rect(frame, 3, 3, 1, 3, (150, 75, 0))
        bgr = frame.pixels[..., ::-1].copy()
        assert segment_tile(ki67_backend, bgr) == []


class TestNoiseDetector:
    def make_backend(self):
        from scopeloop.backends import NoiseDetector

        return NoiseDetector(ModelDescriptor(
            id="noise-detect", task=Task.DETECTION, tile_size=TILE,
            input_format="RGB"))

    def test_same_bytes_same_detections(self):
        backend = self.make_backend()
        tile = np.random.default_rng(11).integers(0, 256, (TILE, TILE, 3), np.uint8)
        a = detect_tile(backend, tile)
        b = detect_tile(backend, tile)
        assert [(d.box.x, d.box.y, d.score) for d in a] == \
            [(d.box.x, d.box.y, d.score) for d in b]

    def test_different_bytes_usually_differ(self):
        backend = self.make_backend()
        rng = np.random.default_rng(12)
        t1 = rng.integers(0, 256, (TILE, TILE, 3), np.uint8)
        t2 = rng.integers(0, 256, (TILE, TILE, 3), np.uint8)
        a = detect_tile(backend, t1)
        b = detect_tile(backend, t2)
        assert [(d.box.x, d.box.y) for d in a] != [(d.box.x, d.box.y) for d in b]


class TestDescriptor:
    def test_rejects_unknown_format(self):
        with pytest.raises(ValueError):
            ModelDescriptor(id="x", task=Task.CLASSIFICATION, tile_size=64,
                            input_format="CMYK")

    def test_rejects_nonpositive_tile(self):
        with pytest.raises(ValueError):
            ModelDescriptor(id="x", task=Task.CLASSIFICATION, tile_size=0,
                            input_format="RGB")


class TestFailureWrapping:
    def test_backend_exception_becomes_backend_failure(self, quadrant_backend):
        class Exploding(type(quadrant_backend)):
            def classify(self, tile):
                raise RuntimeError("boom")

        backend = Exploding(quadrant_backend.descriptor)
        with pytest.raises(BackendFailure):
            classify_tile(backend, rgb_tile((1, 2, 3)))

    def test_wrong_shape_not_wrapped(self, quadrant_backend):
        with pytest.raises(WrongTileShape):
            detect_tile_shape_probe(quadrant_backend)


def detect_tile_shape_probe(backend):
    classify_tile(backend, np.zeros((8, 8, 3), np.uint8))
