"""Local HTTP control plane.

All session state lives here, on the control plane; the worker only ever
hands over immutable snapshots. Every endpoint answers quickly regardless
of what the worker is doing — the server is thread-per-connection and no
handler waits on inference.

Endpoints (JSON request/response unless noted):

  GET  /models                        list model descriptors
  GET  /metrics                       latency window, counters, totals
  GET  /stream                        NDJSON event stream + binary frames
  GET  /                              operator UI (static) or placeholder
  POST /config                        {model,threshold,overlap,mask_alpha,...}
  POST /region                        {left,top,right,bottom}
  POST /start | /stop                 worker lifecycle
  POST /aggregate/propose             validation prompt for the last result
  POST /aggregate/commit              {decision: accept|reject, override_count?}
  POST /calibrate                     {area_mm2}
  POST /export                        {dir?}
  POST /chat/open|/chat/send|/chat/close

Stream framing: one JSON object per line; a line carrying a ``frame`` field
announces ``png_bytes`` of binary data that follow immediately: a 16-byte
header (magic ``SLF1``, u32-LE width, height, format code) and the PNG.
"""

import json
import logging
import mimetypes
import os
import queue
import struct
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .. import chat as chat_mod
from ..errors import (
    AlreadyRunning,
    BadRequest,
    ChannelBroken,
    ChatActive,
    InferenceRunning,
    NoCurrentResult,
    NotRunning,
    ScopeloopError,
)
from ..frames import CaptureRegion, encode_png, open_source
from ..registry import ModelRegistry
from ..session import AggregateSession, export_session
from .events import ResultEvent, StateEvent
from .worker import PipelineWorker, WorkerConfig

logger = logging.getLogger(__name__)

PORT_ENV = "SCOPELOOP_PORT"
DEFAULT_PORT = 8077

STREAM_MAGIC = b"SLF1"
FORMAT_CODES = {"RGB": 0, "BGR": 1, "BGRA": 2}

ERROR_STATUS = {
    "bad_request": 400,
    "override_on_non_count_task": 400,
    "negative_override": 400,
    "non_positive_area": 400,
    "invalid_overlap": 400,
    "unknown_model": 404,
    "already_running": 409,
    "not_running": 409,
    "chat_active": 409,
    "inference_running": 409,
    "no_current_result": 409,
    "roi_dims_changed_since_calibration": 409,
    "uncalibrated": 409,
    "empty_session": 409,
    "channel_broken": 409,
    "degenerate_region": 400,
    "io_failure": 500,
}

PLACEHOLDER_HTML = """<!doctype html>
<meta charset="utf-8"><title>scopeloop</title>
<body style="font-family: sans-serif; margin: 3em;">
<h1>scopeloop control service</h1>
<p>The service is running. No operator UI assets are installed;
point <code>--ui-dir</code> at a built UI to serve it here.</p>
<p>API endpoints: <code>/models</code>, <code>/metrics</code>, <code>/stream</code>.</p>
</body>
"""


def default_port() -> int:
    value = os.environ.get(PORT_ENV)
    return int(value) if value else DEFAULT_PORT


class EventBus:
    """Fan-out of worker events to stream subscribers; survives restarts."""

    def __init__(self, depth: int = 4):
        self._lock = threading.Lock()
        self._subscribers: list = []
        self._depth = depth

    def subscribe(self) -> queue.Queue:
        q = queue.Queue(maxsize=self._depth)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q):
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def publish(self, event):
        with self._lock:
            targets = list(self._subscribers)
        for q in targets:
            while True:
                try:
                    q.put_nowait(event)
                    break
                except queue.Full:
                    try:
                        q.get_nowait()
                    except queue.Empty:
                        pass


class ServiceState:
    """Control-plane state: config, session, worker and chat handles."""

    def __init__(self, registry: ModelRegistry | None = None,
                 ui_dir=None, source_spec: str = "synthetic:0x640x480",
                 model_id: str = "quadrant", interval_ms: float = 0.0):
        self.registry = registry or ModelRegistry()
        self.session = AggregateSession()
        self.bus = EventBus()
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.lock = threading.RLock()
        self.worker: PipelineWorker | None = None
        self.pending = None
        self.chat_handle = None
        self.source_spec = source_spec
        self.interval_ms = interval_ms
        self.region: CaptureRegion | None = None
        self.config = WorkerConfig(model_id=model_id)

    # -- config --------------------------------------------------------

    def apply_config(self, body: dict) -> dict:
        with self.lock:
            cfg = self.config
            model_id = body.get("model", cfg.model_id)
            descriptor = self.registry.get(model_id)
            if "task" in body and body["task"] != descriptor.task.value:
                raise BadRequest(
                    f"model {model_id} is a {descriptor.task.value} model, "
                    f"not {body['task']}")
            threshold = float(body.get("threshold", cfg.threshold))
            overlap = int(body.get("overlap", cfg.overlap))
            mask_alpha = float(body.get("mask_alpha", cfg.mask_alpha))
            if not 0.0 <= threshold <= 1.0:
                raise BadRequest(f"threshold {threshold} outside [0, 1]")
            if not 0.0 <= mask_alpha <= 1.0:
                raise BadRequest(f"mask_alpha {mask_alpha} outside [0, 1]")
            if "source" in body:
                self.source_spec = str(body["source"])
            if "interval_ms" in body:
                self.interval_ms = float(body["interval_ms"])
            self.config = WorkerConfig(model_id=model_id, threshold=threshold,
                                       overlap=overlap, mask_alpha=mask_alpha)
            if self.worker is not None and self.worker.running:
                self.worker.update_config(self.config)
            return self.config_dict()

    def config_dict(self) -> dict:
        cfg = self.config
        return {
            "model": cfg.model_id,
            "task": self.registry.get(cfg.model_id).task.value,
            "threshold": cfg.threshold,
            "overlap": cfg.overlap,
            "mask_alpha": cfg.mask_alpha,
            "source": self.source_spec,
            "interval_ms": self.interval_ms,
        }

    def set_region(self, body: dict) -> dict:
        region = CaptureRegion(
            left=int(body["left"]), top=int(body["top"]),
            right=int(body["right"]), bottom=int(body["bottom"]),
        )
        with self.lock:
            old = self.region
            self.region = region
            dims_changed = old is None or (old.width, old.height) != (
                region.width, region.height)
            if dims_changed and self.session.calibration is not None:
                # physical scale is unknown after a resize
                self.session.invalidate_calibration()
            return {"region": [region.left, region.top, region.right,
                               region.bottom],
                    "calibration_invalidated": dims_changed}

    # -- worker lifecycle ----------------------------------------------

    def start(self) -> dict:
        with self.lock:
            if self.chat_handle is not None and self.chat_handle.alive:
                raise ChatActive("close the chat before starting inference")
            if self.worker is not None and self.worker.running:
                raise AlreadyRunning("inference is already running")
            if self.worker is not None:
                self.worker.stop()
                self.worker = None
            self.registry.get(self.config.model_id)  # validate before opening
            source = open_source(self.source_spec, interval_ms=self.interval_ms,
                                 region=self.region)
            worker = PipelineWorker(
                source=source,
                resolve_backend=self.registry.resolve,
                config=self.config,
                event_sink=self.bus.publish,
            )
            worker.start()
            self.worker = worker
        self.bus.publish(StateEvent(running=True))
        return {"running": True, "config": self.config_dict()}

    def stop(self) -> dict:
        with self.lock:
            if self.worker is None or not self.worker.running:
                raise NotRunning("inference is not running")
            self.worker.stop()
        self.bus.publish(StateEvent(running=False, reason="stopped"))
        return {"running": False}

    # -- aggregation ---------------------------------------------------

    def propose(self) -> dict:
        with self.lock:
            snapshot = self.worker.last_snapshot() if self.worker else None
            if snapshot is None:
                raise NoCurrentResult("no frame has been analyzed yet")
            self.pending = self.session.propose_entry(
                raw_frame=snapshot.raw_frame,
                annotated_frame=snapshot.annotated,
                result=snapshot.result,
                model_id=snapshot.model_id,
            )
            payload = self.pending.prompt_payload()
            payload["seq"] = snapshot.seq
            return payload

    def commit(self, body: dict) -> dict:
        decision = body.get("decision")
        override = body.get("override_count")
        if override is not None:
            override = int(override)
        with self.lock:
            if self.pending is None:
                raise BadRequest("nothing proposed; call /aggregate/propose first")
            if decision not in ("accept", "reject"):
                raise BadRequest("decision must be accept or reject")
            entry = self.session.commit_entry(self.pending, decision,
                                              override_count=override)
            self.pending = None
            out = {"decision": decision, "totals": self.totals_dict()}
            if entry is not None:
                out["entry_id"] = entry.entry_id
            return out

    def calibrate(self, body: dict) -> dict:
        try:
            area = float(body["area_mm2"])
        except (KeyError, TypeError, ValueError):
            raise BadRequest("area_mm2 (positive number) is required") from None
        with self.lock:
            snapshot = self.worker.last_snapshot() if self.worker else None
            if snapshot is not None:
                dims = (snapshot.raw_frame.width, snapshot.raw_frame.height)
            elif self.region is not None:
                dims = (self.region.width, self.region.height)
            else:
                raise BadRequest("no ROI dimensions known; start capture or "
                                 "set a region first")
            state = self.session.calibrate(area, dims)
            return {
                "reference_area_mm2": state.reference_area_mm2,
                "fov_area_mm2": state.fov_area_mm2,
                "roi_dims": list(state.roi_dims),
            }

    def export(self, body: dict) -> dict:
        out_dir = body.get("dir") or "exports"
        with self.lock:
            manifest = export_session(self.session, out_dir)
        return {
            "directory": str(manifest.directory),
            "csv": str(manifest.csv_path),
            "images": [str(p) for p in manifest.image_paths],
            "entries": manifest.entry_count,
        }

    def totals_dict(self) -> dict:
        t = self.session.totals
        try:
            density = self.session.density()
        except ScopeloopError:
            density = None
        return {
            "entry_count": t.entry_count,
            "tile_count": t.tile_count,
            "area_mm2": t.area_mm2,
            "mitosis_model": t.mitosis_model,
            "mitosis_final": t.mitosis_final,
            "ki67_positive": t.ki67_positive,
            "ki67_negative": t.ki67_negative,
            "aggregate_ki67_index": t.aggregate_ki67_index,
            "density_per_mm2": density,
        }

    def metrics_dict(self) -> dict:
        with self.lock:
            worker = self.worker
            running = worker is not None and worker.running
            stats = worker.stats.snapshot() if worker else {
                "window": [], "window_size": 10, "mean_ms": 0.0,
                "stddev_ms": 0.0, "total_cycles": 0}
            produced, dropped = worker.buffer.counters() if worker else (0, 0)
            processed = worker.processed if worker else 0
            return {
                "running": running,
                "latency": stats,
                "frames": {"produced": produced, "processed": processed,
                           "dropped": dropped},
                "config": self.config_dict(),
                "calibration_valid": self.session.calibration is not None,
                "totals": self.totals_dict(),
            }

    # -- chat ----------------------------------------------------------

    def chat_open(self, body: dict) -> dict:
        model = body.get("model", "mock")
        with self.lock:
            if self.worker is not None and self.worker.running:
                raise InferenceRunning("stop inference before opening chat")
            if self.chat_handle is not None and self.chat_handle.alive:
                raise ChatActive("chat is already open")
            self.chat_handle = chat_mod.open_chat(model)
            return {"model": model, "ready": True}

    def chat_close(self) -> dict:
        with self.lock:
            handle, self.chat_handle = self.chat_handle, None
        if handle is not None:
            chat_mod.close_chat(handle)
        return {"closed": True}

    def shutdown(self):
        with self.lock:
            if self.worker is not None:
                self.worker.stop()
                self.worker = None
            if self.chat_handle is not None:
                chat_mod.close_chat(self.chat_handle)
                self.chat_handle = None


class _Handler(BaseHTTPRequestHandler):
    state: ServiceState = None  # installed by ControlServer

    # -- plumbing ------------------------------------------------------

    def log_message(self, fmt, *args):
        logger.debug("http: " + fmt, *args)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw)
        except json.JSONDecodeError:
            raise BadRequest("request body is not valid JSON") from None
        if not isinstance(body, dict):
            raise BadRequest("request body must be a JSON object")
        return body

    def _send_json(self, payload: dict, status: int = 200):
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _send_error_json(self, exc: ScopeloopError):
        status = ERROR_STATUS.get(exc.code, 500)
        self._send_json({"error": {"code": exc.code, "message": str(exc)}},
                        status=status)

    def _dispatch(self, routes):
        path = self.path.split("?", 1)[0]
        handler = routes.get(path)
        try:
            if handler is not None:
                handler(self)
            elif self.command == "GET":
                self._serve_static(path)
            else:
                self._send_json({"error": {"code": "bad_request",
                                           "message": f"no such endpoint {path}"}},
                                status=404)
        except ScopeloopError as exc:
            try:
                self._send_error_json(exc)
            except OSError:
                pass
        except (BrokenPipeError, ConnectionResetError):
            pass
        except Exception as exc:  # noqa: BLE001
            logger.exception("unhandled error in %s %s", self.command, path)
            try:
                self._send_json({"error": {"code": "internal_error",
                                           "message": str(exc)}}, status=500)
            except OSError:
                pass

    def do_GET(self):
        self._dispatch(GET_ROUTES)

    def do_POST(self):
        self._dispatch(POST_ROUTES)

    # -- static UI -----------------------------------------------------

    def _serve_static(self, path: str):
        if path == "/":
            path = "/index.html"
        ui_dir = self.state.ui_dir
        if ui_dir is None or not ui_dir.is_dir():
            if path == "/index.html":
                data = PLACEHOLDER_HTML.encode()
                self.send_response(200)
                self.send_header("Content-Type", "text/html; charset=utf-8")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
                return
            self._send_json({"error": {"code": "bad_request",
                                       "message": f"no such endpoint {path}"}},
                            status=404)
            return
        target = (ui_dir / path.lstrip("/")).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            self._send_json({"error": {"code": "bad_request",
                                       "message": f"not found: {path}"}},
                            status=404)
            return
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    # -- endpoints -----------------------------------------------------

    def h_models(self):
        models = [{
            "id": d.id, "task": d.task.value, "tile_size": d.tile_size,
            "input_format": d.input_format, "source": d.source,
            "sha256": d.sha256,
        } for d in self.state.registry.list()]
        self._send_json({"models": models})

    def h_metrics(self):
        self._send_json(self.state.metrics_dict())

    def h_stream(self):
        state = self.state
        q = state.bus.subscribe()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Cache-Control", "no-store")
            self.end_headers()
            hello = {"type": "hello", **state.metrics_dict()}
            self.wfile.write(json.dumps(hello).encode() + b"\n")
            self.wfile.flush()
            while True:
                try:
                    event = q.get(timeout=15.0)
                except queue.Empty:
                    self.wfile.write(b'{"type":"ping"}\n')
                    self.wfile.flush()
                    continue
                if isinstance(event, ResultEvent):
                    png = encode_png(event.annotated)
                    line = event.payload()
                    line["frame"] = {
                        "png_bytes": len(png),
                        "width": event.annotated.width,
                        "height": event.annotated.height,
                        "format_code": FORMAT_CODES["RGB"],
                    }
                    self.wfile.write(json.dumps(line).encode() + b"\n")
                    header = STREAM_MAGIC + struct.pack(
                        "<III", event.annotated.width, event.annotated.height,
                        FORMAT_CODES["RGB"])
                    self.wfile.write(header + png)
                else:
                    self.wfile.write(json.dumps(event.payload()).encode() + b"\n")
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            state.bus.unsubscribe(q)

    def h_config(self):
        self._send_json(self.state.apply_config(self._read_body()))

    def h_region(self):
        body = self._read_body()
        for key in ("left", "top", "right", "bottom"):
            if key not in body:
                raise BadRequest(f"region requires left/top/right/bottom, missing {key}")
        self._send_json(self.state.set_region(body))

    def h_start(self):
        self._send_json(self.state.start())

    def h_stop(self):
        self._send_json(self.state.stop())

    def h_propose(self):
        self._send_json(self.state.propose())

    def h_commit(self):
        self._send_json(self.state.commit(self._read_body()))

    def h_calibrate(self):
        self._send_json(self.state.calibrate(self._read_body()))

    def h_export(self):
        self._send_json(self.state.export(self._read_body()))

    def h_chat_open(self):
        self._send_json(self.state.chat_open(self._read_body()))

    def h_chat_close(self):
        self._send_json(self.state.chat_close())

    def h_chat_send(self):
        body = self._read_body()
        state = self.state
        with state.lock:
            handle = state.chat_handle
        if handle is None:
            raise ChannelBroken("chat is not open")
        image = None
        if body.get("image_b64"):
            import base64

            try:
                image = base64.b64decode(body["image_b64"], validate=True)
            except Exception:
                raise BadRequest("image_b64 is not valid base64") from None
        message = chat_mod.ChatMessage(role="user", text=body.get("text", ""),
                                       image=image)
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.end_headers()
        try:
            for chunk in chat_mod.send_prompt(handle, message):
                line = {"type": "done"} if chunk.terminal else {
                    "type": "token", "text": chunk.text}
                self.wfile.write(json.dumps(line).encode() + b"\n")
                self.wfile.flush()
        except ChannelBroken as exc:
            try:
                self.wfile.write(json.dumps(
                    {"type": "error", "code": exc.code,
                     "message": str(exc)}).encode() + b"\n")
                self.wfile.flush()
            except OSError:
                pass
        except (BrokenPipeError, ConnectionResetError):
            pass


GET_ROUTES = {
    "/models": _Handler.h_models,
    "/metrics": _Handler.h_metrics,
    "/stream": _Handler.h_stream,
}

POST_ROUTES = {
    "/config": _Handler.h_config,
    "/region": _Handler.h_region,
    "/start": _Handler.h_start,
    "/stop": _Handler.h_stop,
    "/aggregate/propose": _Handler.h_propose,
    "/aggregate/commit": _Handler.h_commit,
    "/calibrate": _Handler.h_calibrate,
    "/export": _Handler.h_export,
    "/chat/open": _Handler.h_chat_open,
    "/chat/send": _Handler.h_chat_send,
    "/chat/close": _Handler.h_chat_close,
}


class _Httpd(ThreadingHTTPServer):
    daemon_threads = True
    # burst of concurrent control requests must not stall behind the
    # kernel's tiny default listen queue
    request_queue_size = 128


class ControlServer:
    """ThreadingHTTPServer wrapper bound to one ServiceState."""

    def __init__(self, state: ServiceState, host: str = "127.0.0.1",
                 port: int | None = None):
        self.state = state
        handler = type("BoundHandler", (_Handler,), {"state": state})
        self._httpd = _Httpd(
            (host, port if port is not None else default_port()), handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host = self._httpd.server_address[0]
        return f"http://{host}:{self.port}"

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="scopeloop-http", daemon=True)
        self._thread.start()

    def serve_forever(self):
        self._httpd.serve_forever()

    def stop(self):
        self._httpd.shutdown()
        if self._thread is not None:
            self._thread.join(5.0)
            self._thread = None
        self._httpd.server_close()
        self.state.shutdown()
