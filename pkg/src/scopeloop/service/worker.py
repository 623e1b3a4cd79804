"""Background worker: capture -> convert -> tile -> infer -> merge -> render.

The producer thread pulls frames from the source into a depth-1 overwrite
buffer; the worker thread takes the newest frame each cycle. Neither plane
ever waits on the other: slow inference means frames are dropped (counted),
never queued.
"""

import logging
import queue
import threading
import time
from dataclasses import dataclass

from ..backends import InferenceBackend, Task
from ..errors import ScopeloopError
from ..overlay import OverlayStyle, render_result
from ..pipelines import NmsConfig, analyze_frame
from .crashlog import log_crash
from .events import ErrorEvent, ResultEvent, StateEvent
from .metrics import LatencyStats

logger = logging.getLogger(__name__)

TAKE_TIMEOUT_S = 0.25
SUBSCRIBER_QUEUE_DEPTH = 4


@dataclass(frozen=True)
class WorkerConfig:
    model_id: str
    threshold: float = 0.0
    overlap: int = 64
    mask_alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")


@dataclass(frozen=True)
class ResultSnapshot:
    seq: int
    model_id: str
    raw_frame: object
    result: object
    annotated: object
    cycle_ms: float
    adapter_ms: float
    overhead_ms: float
    timestamp_ns: int


class LatestFrameBuffer:
    """Depth-1 frame slot: writers overwrite, readers take the newest."""

    def __init__(self):
        self._cond = threading.Condition()
        self._frame = None
        self.produced = 0
        self.dropped = 0

    def put(self, frame):
        with self._cond:
            if self._frame is not None:
                self.dropped += 1
            self._frame = frame
            self.produced += 1
            self._cond.notify()

    def take(self, timeout: float):
        with self._cond:
            if self._frame is None:
                self._cond.wait(timeout)
            frame, self._frame = self._frame, None
            return frame

    def counters(self) -> tuple:
        with self._cond:
            return self.produced, self.dropped


class TimingBackend(InferenceBackend):
    """Accumulates time spent inside the wrapped adapter per cycle."""

    def __init__(self, inner: InferenceBackend):
        super().__init__(inner.descriptor)
        self.inner = inner
        self.reentrant = inner.reentrant
        self._seconds = 0.0

    def _timed(self, fn, tile):
        t0 = time.perf_counter()
        try:
            return fn(tile)
        finally:
            self._seconds += time.perf_counter() - t0

    def classify(self, tile):
        return self._timed(self.inner.classify, tile)

    def detect(self, tile):
        return self._timed(self.inner.detect, tile)

    def segment(self, tile):
        return self._timed(self.inner.segment, tile)

    def drain_seconds(self) -> float:
        s, self._seconds = self._seconds, 0.0
        return s

    def close(self):
        self.inner.close()


class PipelineWorker:
    """Owns the frame source and the loaded backend for its lifetime."""

    def __init__(self, source, resolve_backend, config: WorkerConfig,
                 nms: NmsConfig = NmsConfig(), producer_interval_s: float = 0.0,
                 event_sink=None):
        self._source = source
        self._resolve = resolve_backend
        self._config = config
        self._nms = nms
        self._producer_interval_s = producer_interval_s
        self._event_sink = event_sink
        self._backend: TimingBackend | None = None
        self.buffer = LatestFrameBuffer()
        self.stats = LatencyStats()
        self.processed = 0
        self._stop = threading.Event()
        self._halted = threading.Event()
        self._snapshot_lock = threading.Lock()
        self._snapshot: ResultSnapshot | None = None
        self._seq = 0
        self._subscribers: list = []
        self._sub_lock = threading.Lock()
        self._producer_error = None
        self._threads: list = []

    # -- control-plane surface -----------------------------------------

    @property
    def running(self) -> bool:
        return bool(self._threads) and not self._halted.is_set()

    def update_config(self, config: WorkerConfig):
        # single reference assignment: the loop picks it up at the next
        # cycle boundary
        self._config = config

    @property
    def config(self) -> WorkerConfig:
        return self._config

    def last_snapshot(self) -> ResultSnapshot | None:
        with self._snapshot_lock:
            return self._snapshot

    def subscribe(self) -> queue.Queue:
        q = queue.Queue(maxsize=SUBSCRIBER_QUEUE_DEPTH)
        with self._sub_lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q):
        with self._sub_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _publish(self, event):
        if self._event_sink is not None:
            self._event_sink(event)
        with self._sub_lock:
            targets = list(self._subscribers)
        for q in targets:
            while True:
                try:
                    q.put_nowait(event)
                    break
                except queue.Full:
                    try:
                        q.get_nowait()  # latest wins on slow consumers too
                    except queue.Empty:
                        pass

    # -- lifecycle -----------------------------------------------------

    def start(self):
        if self._threads:
            raise RuntimeError("worker already started")
        self._backend = TimingBackend(self._resolve(self._config.model_id))
        producer = threading.Thread(target=self._produce, name="scopeloop-producer",
                                    daemon=True)
        worker = threading.Thread(target=self._run, name="scopeloop-worker",
                                  daemon=True)
        self._threads = [producer, worker]
        producer.start()
        worker.start()

    def stop(self, timeout: float = 5.0):
        self._stop.set()
        for t in self._threads:
            t.join(timeout)
        self._threads = []
        if self._backend is not None:
            self._backend.close()
            self._backend = None
        self._source.close()

    def join_halted(self, timeout: float):
        return self._halted.wait(timeout)

    # -- producer plane ------------------------------------------------

    def _produce(self):
        try:
            while not self._stop.is_set():
                frame = self._source.next_frame()
                self.buffer.put(frame)
                if self._producer_interval_s > 0:
                    self._stop.wait(self._producer_interval_s)
                else:
                    time.sleep(0)  # yield to the consumer
        except Exception as exc:  # noqa: BLE001 - routed to crash log
            if not self._stop.is_set():
                self._producer_error = exc
        finally:
            self._stop.set()

    # -- worker plane ----------------------------------------------------

    def _swap_backend(self, model_id: str):
        old = self._backend
        if old is not None:
            old.close()  # release before loading the next model
        self._backend = TimingBackend(self._resolve(model_id))

    def _run(self):
        while not self._stop.is_set():
            frame = self.buffer.take(TAKE_TIMEOUT_S)
            if frame is None:
                if self._producer_error is not None:
                    self._fail(self._producer_error, "producer")
                    return
                continue
            config = self._config  # snapshot for this cycle
            try:
                if config.model_id != self._backend.descriptor.id:
                    self._swap_backend(config.model_id)
                self._cycle(frame, config)
            except Exception as exc:  # noqa: BLE001 - routed to crash log
                self._fail(exc, "cycle")
                return
        if self._producer_error is not None and not self._halted.is_set():
            self._fail(self._producer_error, "producer")

    def _cycle(self, frame, config: WorkerConfig):
        t0 = time.perf_counter()
        self._backend.drain_seconds()
        result = analyze_frame(
            frame, self._backend,
            overlap=config.overlap,
            threshold=config.threshold,
            config=self._nms,
        )
        style = OverlayStyle(mask_alpha=config.mask_alpha)
        annotated = render_result(result.frame, result, style)
        cycle_ms = (time.perf_counter() - t0) * 1000.0
        adapter_ms = self._backend.drain_seconds() * 1000.0
        self.processed += 1
        self.stats.add(cycle_ms)
        produced, dropped = self.buffer.counters()

        self._seq += 1
        snapshot = ResultSnapshot(
            seq=self._seq,
            model_id=self._backend.descriptor.id,
            raw_frame=frame,
            result=result,
            annotated=annotated,
            cycle_ms=cycle_ms,
            adapter_ms=adapter_ms,
            overhead_ms=cycle_ms - adapter_ms,
            timestamp_ns=time.time_ns(),
        )
        with self._snapshot_lock:
            self._snapshot = snapshot
        self._publish(ResultEvent(
            seq=snapshot.seq,
            timestamp_ns=snapshot.timestamp_ns,
            task=self._backend.descriptor.task.value,
            model_id=self._backend.descriptor.id,
            threshold=config.threshold,
            cycle_ms=cycle_ms,
            adapter_ms=adapter_ms,
            overhead_ms=snapshot.overhead_ms,
            produced=produced,
            processed=self.processed,
            dropped=dropped,
            summary=_summarize(result),
            annotated=annotated,
        ))

    def _fail(self, exc, where: str):
        self._halted.set()
        self._stop.set()
        code = exc.code if isinstance(exc, ScopeloopError) else "internal_error"
        context = {
            "where": where,
            "model_id": self._config.model_id,
            "threshold": self._config.threshold,
            "overlap": self._config.overlap,
            "processed": self.processed,
        }
        path = log_crash(exc, context)
        logger.error("worker halted (%s): %s; crash log at %s", where, exc, path)
        self._publish(ErrorEvent(code=code, message=str(exc), log_path=str(path)))
        self._publish(StateEvent(running=False, reason=code))


def _summarize(result) -> dict:
    from ..pipelines import ClassificationResult, DetectionResult

    if isinstance(result, ClassificationResult):
        return {
            "task": Task.CLASSIFICATION.value,
            "predicted": result.predicted_name,
            "confidence": result.mean_probs.probs[result.predicted],
            "probs": dict(zip(result.mean_probs.class_names,
                              result.mean_probs.probs)),
            "tile_count": result.tile_count,
        }
    if isinstance(result, DetectionResult):
        return {
            "task": Task.DETECTION.value,
            "count": result.count,
            "raw_count": result.raw_count,
            "bands": [b.value for b in result.bands],
            "boxes": [
                [d.box.x, d.box.y, d.box.w, d.box.h, d.score]
                for d in result.detections
            ],
            "tile_count": result.tile_count,
        }
    return {
        "task": Task.SEGMENTATION.value,
        "positive": result.positive,
        "negative": result.negative,
        "index": result.index,
        "tile_count": result.tile_count,
    }
