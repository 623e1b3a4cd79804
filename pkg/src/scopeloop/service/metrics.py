import statistics
import threading
from collections import deque

LATENCY_WINDOW = 10


class LatencyStats:
    """Rolling window of per-cycle latencies with mean and stddev."""

    def __init__(self, window: int = LATENCY_WINDOW):
        self._window = deque(maxlen=window)
        self._lock = threading.Lock()
        self.total_cycles = 0

    def add(self, latency_ms: float):
        with self._lock:
            self._window.append(float(latency_ms))
            self.total_cycles += 1

    def snapshot(self) -> dict:
        with self._lock:
            values = list(self._window)
        mean = statistics.fmean(values) if values else 0.0
        stddev = statistics.stdev(values) if len(values) >= 2 else 0.0
        return {
            "window": values,
            "window_size": self._window.maxlen,
            "mean_ms": mean,
            "stddev_ms": stddev,
            "total_cycles": self.total_cycles,
        }
