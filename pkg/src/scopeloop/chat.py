"""Subprocess text-generation bridge.

The chat model runs in a separate worker process; parent and child exchange
newline-delimited JSON over the child's standard streams:

  parent -> child:  {"type": "prompt", "text": ..., "image_b64": ...}
                    {"type": "image", "data_b64": ..., "done": bool}  (chunked)
                    {"type": "close"}
  child -> parent:  {"type": "ready", "model": ...}
                    {"type": "token", "text": ...}   (repeated)
                    {"type": "done"}
                    {"type": "error", "message": ...}

No single message may exceed 1 MiB; larger images are split across
``image`` messages and referenced by ``"image_attached": true`` on the
following prompt. A child death at any point surfaces as a typed error on
the parent — never a parent crash.
"""

import base64
import json
import logging
import queue
import subprocess
import sys
import threading
from dataclasses import dataclass

from .errors import (
    ChannelBroken,
    HandshakeTimeout,
    SpawnFailure,
    UnknownModel,
)

logger = logging.getLogger(__name__)

CHAT_MODELS = ("mock",)
MAX_MESSAGE_BYTES = 1 << 20
# keep chunked image messages comfortably under the cap after JSON overhead
IMAGE_CHUNK_B64_CHARS = 700_000
HANDSHAKE_TIMEOUT_S = 5.0
STREAM_IDLE_TIMEOUT_S = 30.0
CLOSE_GRACE_S = 1.0

_EOF = object()


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str
    image: bytes | None = None

    def __post_init__(self):
        if self.role not in ("user", "assistant"):
            raise ValueError(f"role must be user or assistant, got {self.role!r}")
        if self.role == "assistant" and self.image is not None:
            raise ValueError("assistant messages never carry an image")


@dataclass(frozen=True)
class TokenChunk:
    text: str
    terminal: bool


class ChatHandle:
    """One live worker subprocess plus its reader thread."""

    def __init__(self, proc: subprocess.Popen, model_id: str):
        self.model_id = model_id
        self._proc = proc
        self._lines: queue.Queue = queue.Queue()
        self._closed = False
        self._write_lock = threading.Lock()
        self._reader = threading.Thread(target=self._pump, daemon=True,
                                        name="scopeloop-chat-reader")
        self._reader.start()
        self._stderr_thread = threading.Thread(target=self._drain_stderr,
                                               daemon=True)
        self._stderr_thread.start()

    # -- reader plane --------------------------------------------------

    def _pump(self):
        try:
            for raw in self._proc.stdout:
                self._lines.put(raw)
        except (OSError, ValueError):
            pass
        finally:
            self._lines.put(_EOF)

    def _drain_stderr(self):
        try:
            for raw in self._proc.stderr:
                logger.debug("chat worker stderr: %s", raw.rstrip())
        except (OSError, ValueError):
            pass

    # -- state ---------------------------------------------------------

    @property
    def alive(self) -> bool:
        return not self._closed and self._proc.poll() is None

    @property
    def closed(self) -> bool:
        return self._closed

    # -- wire helpers --------------------------------------------------

    def _send(self, message: dict):
        data = json.dumps(message) + "\n"
        if len(data) > MAX_MESSAGE_BYTES and message.get("type") != "image":
            raise ValueError("message exceeds the 1 MiB wire cap")
        try:
            with self._write_lock:
                self._proc.stdin.write(data)
                self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise ChannelBroken(f"chat worker is gone: {exc}") from exc

    def _next_message(self, timeout: float) -> dict:
        try:
            raw = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise ChannelBroken("chat worker stopped responding") from None
        if raw is _EOF:
            raise ChannelBroken("chat worker closed its output stream")
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ChannelBroken(f"unparseable message from chat worker: {exc}") from exc


def open_chat(model_id: str, timeout: float = HANDSHAKE_TIMEOUT_S) -> ChatHandle:
    """Spawn the worker subprocess and wait for its ready handshake."""
    if model_id not in CHAT_MODELS:
        raise UnknownModel(
            f"unknown chat model {model_id!r}; available: {', '.join(CHAT_MODELS)}")
    try:
        proc = subprocess.Popen(
            [sys.executable, "-m", "scopeloop.chat_worker", model_id],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
    except OSError as exc:
        raise SpawnFailure(f"could not spawn chat worker: {exc}") from exc
    handle = ChatHandle(proc, model_id)
    try:
        message = handle._next_message(timeout)
    except ChannelBroken as exc:
        close_chat(handle)
        raise HandshakeTimeout(f"chat worker never became ready: {exc}") from exc
    if message.get("type") != "ready":
        close_chat(handle)
        raise HandshakeTimeout(f"expected ready handshake, got {message!r}")
    return handle


def send_prompt(handle: ChatHandle, message: ChatMessage):
    """Yield TokenChunks for one prompt; generator raises ChannelBroken
    if the worker dies mid-stream (already-yielded text stands)."""
    if message.role != "user":
        raise ValueError("only user messages can be sent")
    if handle.closed or not handle.alive:
        raise ChannelBroken("chat handle is closed")

    prompt = {"type": "prompt", "text": message.text}
    if message.image is not None:
        b64 = base64.b64encode(message.image).decode("ascii")
        if len(b64) <= IMAGE_CHUNK_B64_CHARS:
            prompt["image_b64"] = b64
        else:
            for i in range(0, len(b64), IMAGE_CHUNK_B64_CHARS):
                part = b64[i:i + IMAGE_CHUNK_B64_CHARS]
                handle._send({"type": "image", "data_b64": part,
                              "done": i + IMAGE_CHUNK_B64_CHARS >= len(b64)})
            prompt["image_attached"] = True
    handle._send(prompt)

    def stream():
        while True:
            reply = handle._next_message(STREAM_IDLE_TIMEOUT_S)
            kind = reply.get("type")
            if kind == "token":
                yield TokenChunk(text=reply.get("text", ""), terminal=False)
            elif kind == "done":
                yield TokenChunk(text="", terminal=True)
                return
            elif kind == "error":
                raise ChannelBroken(
                    f"chat worker error: {reply.get('message', 'unknown')}")
            # other message types are ignored mid-stream

    return stream()


def close_chat(handle: ChatHandle, grace_s: float = CLOSE_GRACE_S):
    """Terminate the worker: polite message first, then force. Idempotent."""
    if handle.closed:
        return
    handle._closed = True
    proc = handle._proc
    if proc.poll() is None:
        try:
            with handle._write_lock:
                proc.stdin.write('{"type": "close"}\n')
                proc.stdin.flush()
        except (OSError, ValueError):
            pass
        try:
            proc.wait(timeout=grace_s)
        except subprocess.TimeoutExpired:
            proc.terminate()
            try:
                proc.wait(timeout=0.8)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
    for stream in (proc.stdin, proc.stdout, proc.stderr):
        try:
            if stream is not None:
                stream.close()
        except OSError:
            pass
