"""Aggregation sessions: validated per-ROI entries, physical-unit
calibration, cumulative totals and CSV/PNG export.

The operator reviews each proposed entry (accept / reject, with an editable
count for detection) and only accepted entries reach the pool. Totals are
maintained incrementally and must always equal a from-scratch fold over the
entries — the test suite holds us to that bit-exactly.
"""

import csv
import dataclasses
import shutil
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .backends import Task
from .errors import (
    EmptySession,
    IoFailure,
    NegativeOverride,
    NoCurrentResult,
    NonPositiveArea,
    OverrideOnNonCountTask,
    RoiDimsChangedSinceCalibration,
    Uncalibrated,
)
from .frames import Frame, PixelFormat, convert_format
from .pipelines import ClassificationResult, DetectionResult, Ki67Result

FOV_TO_REFERENCE_RATIO = 9  # reference box is 1/3 x 1/3 of the ROI


@dataclass(frozen=True)
class CalibrationState:
    reference_area_mm2: float
    roi_dims: tuple  # (w, h) at calibration time
    fov_area_mm2: float

    def __post_init__(self):
        if self.reference_area_mm2 <= 0:
            raise NonPositiveArea(
                f"reference area must be positive, got {self.reference_area_mm2}")


@dataclass(frozen=True)
class ClassificationMetrics:
    probs: tuple
    class_names: tuple
    predicted: int


@dataclass(frozen=True)
class MitosisMetrics:
    model_count: int
    final_count: int


@dataclass(frozen=True)
class Ki67Metrics:
    positive: int
    negative: int
    index: float | None


@dataclass(frozen=True)
class SessionEntry:
    entry_id: int
    task: Task
    model_id: str
    tile_count: int
    metrics: object
    raw_frame: Frame = field(repr=False)
    annotated_frame: Frame = field(repr=False)
    area_mm2: float | None = None
    timestamp_ns: int = 0


@dataclass(frozen=True)
class PendingEntry:
    task: Task
    model_id: str
    tile_count: int
    metrics: object
    raw_frame: Frame = field(repr=False)
    annotated_frame: Frame = field(repr=False)

    def prompt_payload(self) -> dict:
        """Task-specific validation prompt for the operator dialog."""
        if isinstance(self.metrics, ClassificationMetrics):
            m = self.metrics
            return {
                "task": self.task.value,
                "predicted": m.class_names[m.predicted],
                "confidence": m.probs[m.predicted],
                "probs": dict(zip(m.class_names, m.probs)),
                "editable_count": False,
            }
        if isinstance(self.metrics, MitosisMetrics):
            return {
                "task": self.task.value,
                "model_count": self.metrics.model_count,
                "editable_count": True,
            }
        m = self.metrics
        return {
            "task": self.task.value,
            "positive": m.positive,
            "negative": m.negative,
            "index": m.index,
            "editable_count": False,
        }


@dataclass
class Totals:
    entry_count: int = 0
    tile_count: int = 0
    area_mm2: float = 0.0
    calibrated_mitosis_area_mm2: float = 0.0
    calibrated_mitosis_final: int = 0
    mitosis_model: int = 0
    mitosis_final: int = 0
    ki67_positive: int = 0
    ki67_negative: int = 0

    def add(self, entry: SessionEntry):
        self.entry_count += 1
        self.tile_count += entry.tile_count
        if entry.area_mm2 is not None:
            self.area_mm2 += entry.area_mm2
        if isinstance(entry.metrics, MitosisMetrics):
            self.mitosis_model += entry.metrics.model_count
            self.mitosis_final += entry.metrics.final_count
            if entry.area_mm2 is not None:
                # density pairs counts with areas from the same entries
                self.calibrated_mitosis_area_mm2 += entry.area_mm2
                self.calibrated_mitosis_final += entry.metrics.final_count
        elif isinstance(entry.metrics, Ki67Metrics):
            self.ki67_positive += entry.metrics.positive
            self.ki67_negative += entry.metrics.negative

    @property
    def aggregate_ki67_index(self) -> float | None:
        total = self.ki67_positive + self.ki67_negative
        return self.ki67_positive / total if total else None


def fold_totals(entries) -> Totals:
    """From-scratch recomputation; must equal the incremental totals."""
    totals = Totals()
    for entry in entries:
        totals.add(entry)
    return totals


def _metrics_from_result(result):
    if isinstance(result, ClassificationResult):
        return ClassificationMetrics(
            probs=result.mean_probs.probs,
            class_names=result.mean_probs.class_names,
            predicted=result.predicted,
        )
    if isinstance(result, DetectionResult):
        n = len(result.detections)
        return MitosisMetrics(model_count=n, final_count=n)
    if isinstance(result, Ki67Result):
        return Ki67Metrics(positive=result.positive, negative=result.negative,
                           index=result.index)
    raise TypeError(f"unsupported result type {type(result).__name__}")


_TASK_BY_RESULT = {
    ClassificationResult: Task.CLASSIFICATION,
    DetectionResult: Task.DETECTION,
    Ki67Result: Task.SEGMENTATION,
}


class AggregateSession:
    """Single-owner session log; all mutations happen on the control plane."""

    def __init__(self, started_ns: int | None = None):
        self.started_ns = time.time_ns() if started_ns is None else started_ns
        self.entries: list = []
        self.totals = Totals()
        self.calibration: CalibrationState | None = None

    # -- validation flow -----------------------------------------------

    def propose_entry(self, raw_frame, annotated_frame, result,
                      model_id: str) -> PendingEntry:
        if result is None:
            raise NoCurrentResult("no frame has been analyzed yet")
        return PendingEntry(
            task=_TASK_BY_RESULT[type(result)],
            model_id=model_id,
            tile_count=result.tile_count,
            metrics=_metrics_from_result(result),
            raw_frame=raw_frame,
            annotated_frame=annotated_frame,
        )

    def commit_entry(self, pending: PendingEntry, decision: str,
                     override_count: int | None = None) -> SessionEntry | None:
        """Apply the operator's decision; returns the appended entry or None."""
        if decision not in ("accept", "reject"):
            raise ValueError(f"decision must be accept or reject, got {decision!r}")
        if override_count is not None:
            if pending.task is not Task.DETECTION:
                raise OverrideOnNonCountTask(
                    f"count override applies to detection only, not {pending.task.value}")
            if override_count < 0:
                raise NegativeOverride(f"count cannot be negative: {override_count}")
        if decision == "reject":
            return None

        metrics = pending.metrics
        if override_count is not None:
            metrics = dataclasses.replace(metrics, final_count=override_count)

        area = None
        if self.calibration is not None:
            dims = (pending.raw_frame.width, pending.raw_frame.height)
            if dims != self.calibration.roi_dims:
                raise RoiDimsChangedSinceCalibration(
                    f"ROI is {dims} but calibration was taken at "
                    f"{self.calibration.roi_dims}; recalibrate first")
            area = self.calibration.fov_area_mm2

        entry = SessionEntry(
            entry_id=len(self.entries) + 1,
            task=pending.task,
            model_id=pending.model_id,
            tile_count=pending.tile_count,
            metrics=metrics,
            raw_frame=pending.raw_frame,
            annotated_frame=pending.annotated_frame,
            area_mm2=area,
            timestamp_ns=time.time_ns(),
        )
        self.entries.append(entry)
        self.totals.add(entry)
        return entry

    # -- calibration ---------------------------------------------------

    def calibrate(self, measured_reference_area_mm2: float,
                  roi_dims: tuple) -> CalibrationState:
        if measured_reference_area_mm2 <= 0:
            raise NonPositiveArea(
                f"measured area must be positive, got {measured_reference_area_mm2}")
        self.calibration = CalibrationState(
            reference_area_mm2=measured_reference_area_mm2,
            roi_dims=(int(roi_dims[0]), int(roi_dims[1])),
            fov_area_mm2=FOV_TO_REFERENCE_RATIO * measured_reference_area_mm2,
        )
        return self.calibration

    def invalidate_calibration(self):
        self.calibration = None

    def density(self) -> float:
        """Mitoses per mm² over calibrated detection entries."""
        if self.calibration is None:
            raise Uncalibrated("calibrate before requesting density")
        if self.totals.calibrated_mitosis_area_mm2 <= 0:
            raise EmptySession("no accepted detection entries with a known area")
        return (self.totals.calibrated_mitosis_final
                / self.totals.calibrated_mitosis_area_mm2)


# -- export ------------------------------------------------------------

CSV_BASE_COLUMNS = ("entry_id", "task", "model_id", "tile_count", "area_mm2",
                    "timestamp_ns")
CSV_COUNT_COLUMNS = ("model_count", "final_count", "pos", "neg", "index")
CSV_DERIVED_COLUMNS = ("density_per_mm2", "aggregate_ki67_index")


@dataclass(frozen=True)
class ExportManifest:
    directory: Path
    csv_path: Path
    image_paths: tuple
    entry_count: int


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # shortest round-trip form
    return str(value)


def _save_png(frame: Frame, path: Path):
    from PIL import Image

    rgb = convert_format(frame, PixelFormat.RGB)
    Image.fromarray(rgb.pixels, "RGB").save(path)


def export_dir_name(started_ns: int) -> str:
    stamp = datetime.fromtimestamp(started_ns / 1e9, tz=timezone.utc)
    return "export_" + stamp.strftime("%Y%m%dT%H%M%SZ")


def _class_columns(entries) -> tuple:
    for entry in entries:
        if isinstance(entry.metrics, ClassificationMetrics):
            return entry.metrics.class_names
    return ()


def _csv_rows(session: AggregateSession) -> list:
    class_names = _class_columns(session.entries)
    header = list(CSV_BASE_COLUMNS)
    header += [f"prob_{name}" for name in class_names]
    if class_names:
        header.append("predicted")
    header += CSV_COUNT_COLUMNS
    header += CSV_DERIVED_COLUMNS

    rows = [header]
    for e in session.entries:
        cells = {
            "entry_id": e.entry_id,
            "task": e.task.value,
            "model_id": e.model_id,
            "tile_count": e.tile_count,
            "area_mm2": e.area_mm2,
            "timestamp_ns": e.timestamp_ns,
        }
        m = e.metrics
        if isinstance(m, ClassificationMetrics):
            for name, p in zip(m.class_names, m.probs):
                cells[f"prob_{name}"] = p
            cells["predicted"] = m.class_names[m.predicted]
        elif isinstance(m, MitosisMetrics):
            cells["model_count"] = m.model_count
            cells["final_count"] = m.final_count
        else:
            cells["pos"] = m.positive
            cells["neg"] = m.negative
            cells["index"] = m.index
        rows.append([_fmt(cells.get(col)) for col in header])

    totals = session.totals
    agg = {
        "entry_id": "AGGREGATE",
        "tile_count": totals.tile_count,
        "area_mm2": totals.area_mm2,
        "model_count": totals.mitosis_model,
        "final_count": totals.mitosis_final,
        "pos": totals.ki67_positive,
        "neg": totals.ki67_negative,
        "aggregate_ki67_index": totals.aggregate_ki67_index,
    }
    if (session.calibration is not None
            and totals.calibrated_mitosis_area_mm2 > 0):
        agg["density_per_mm2"] = (
            totals.calibrated_mitosis_final / totals.calibrated_mitosis_area_mm2)
    rows.append([_fmt(agg.get(col)) for col in header])
    return rows


def export_session(session: AggregateSession, out_dir) -> ExportManifest:
    """Write entry images and session.csv under a session-stamped directory."""
    target = Path(out_dir) / export_dir_name(session.started_ns)
    created = not target.exists()
    try:
        target.mkdir(parents=True, exist_ok=True)
        image_paths = []
        for e in session.entries:
            raw_path = target / f"entry_{e.entry_id}_raw.png"
            ann_path = target / f"entry_{e.entry_id}_annotated.png"
            _save_png(e.raw_frame, raw_path)
            _save_png(e.annotated_frame, ann_path)
            image_paths += [raw_path, ann_path]
        csv_path = target / "session.csv"
        with open(csv_path, "w", newline="") as fh:
            csv.writer(fh).writerows(_csv_rows(session))
    except OSError as exc:
        if created:
            shutil.rmtree(target, ignore_errors=True)
        raise IoFailure(f"export to {target} failed: {exc}") from exc
    return ExportManifest(directory=target, csv_path=csv_path,
                          image_paths=tuple(image_paths),
                          entry_count=len(session.entries))
