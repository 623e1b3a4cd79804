"""Two-plane runtime: background worker loop + local control API."""

from .api import ControlServer, ServiceState  # noqa: F401
from .worker import LatestFrameBuffer, PipelineWorker, WorkerConfig  # noqa: F401
