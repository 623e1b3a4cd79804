"""Immutable messages passed between the worker and control planes."""

from dataclasses import asdict, dataclass, field

from ..frames import Frame


@dataclass(frozen=True)
class ResultEvent:
    """One completed worker cycle: metrics plus the annotated frame."""

    seq: int
    timestamp_ns: int
    task: str
    model_id: str
    threshold: float
    cycle_ms: float
    adapter_ms: float
    overhead_ms: float
    produced: int
    processed: int
    dropped: int
    summary: dict
    annotated: Frame = field(repr=False, compare=False)

    def payload(self) -> dict:
        d = asdict(self)
        d.pop("annotated")
        d["type"] = "result"
        return d


@dataclass(frozen=True)
class ErrorEvent:
    code: str
    message: str
    log_path: str

    def payload(self) -> dict:
        return {"type": "error", "code": self.code, "message": self.message,
                "log_path": self.log_path}


@dataclass(frozen=True)
class StateEvent:
    running: bool
    reason: str = ""

    def payload(self) -> dict:
        return {"type": "state", "running": self.running, "reason": self.reason}
