"""Frame acquisition and pixel-format handling.

Three interchangeable sources feed the pipeline: live screen capture of a
user-selected region, a replay directory of image files, and a seeded
synthetic generator. Replay and synthetic are deterministic so the whole
pipeline can be exercised headless.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DecodeFailure, DegenerateRegion, SourceClosed

logger = logging.getLogger(__name__)

REPLAY_EXTENSIONS = {".png", ".bmp", ".jpg", ".jpeg"}


class PixelFormat(Enum):
    BGRA = "BGRA"
    RGB = "RGB"
    BGR = "BGR"

    @property
    def bytes_per_pixel(self) -> int:
        return 4 if self is PixelFormat.BGRA else 3


@dataclass(frozen=True)
class CaptureRegion:
    """Screen-coordinate rectangle selected by the operator."""

    left: int
    top: int
    right: int
    bottom: int

    def __post_init__(self):
        if self.right <= self.left or self.bottom <= self.top:
            raise DegenerateRegion(
                f"region must have positive extent, got "
                f"{self.left},{self.top} -> {self.right},{self.bottom}"
            )

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def height(self) -> int:
        return self.bottom - self.top


def select_region(click_a: tuple, click_b: tuple) -> CaptureRegion:
    """Build a normalized region from two corner clicks, in either order."""
    ax, ay = click_a
    bx, by = click_b
    return CaptureRegion(
        left=min(ax, bx), top=min(ay, by), right=max(ax, bx), bottom=max(ay, by)
    )


@dataclass(frozen=True)
class Frame:
    """One captured image plus provenance.

    ``pixels`` is a contiguous H x W x C uint8 array whose channel count
    matches ``format``. Frames are treated as immutable once constructed.
    """

    width: int
    height: int
    pixels: np.ndarray = field(repr=False)
    format: PixelFormat
    timestamp_ns: int
    source_id: str

    def __post_init__(self):
        expected = (self.height, self.width, self.format.bytes_per_pixel)
        if self.pixels.shape != expected or self.pixels.dtype != np.uint8:
            raise ValueError(
                f"pixel buffer shape {self.pixels.shape}/{self.pixels.dtype} "
                f"does not match {expected}/uint8"
            )
        if not self.pixels.flags["C_CONTIGUOUS"]:
            object.__setattr__(self, "pixels", np.ascontiguousarray(self.pixels))

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


def frame_from_array(array: np.ndarray, fmt: PixelFormat, source_id: str,
                     timestamp_ns: int | None = None) -> Frame:
    if array.dtype != np.uint8:
        raise ValueError(f"pixel arrays must be uint8, got {array.dtype}")
    array = np.ascontiguousarray(array)
    h, w = array.shape[:2]
    if timestamp_ns is None:
        timestamp_ns = time.monotonic_ns()
    return Frame(width=w, height=h, pixels=array, format=fmt,
                 timestamp_ns=timestamp_ns, source_id=source_id)


_CHANNEL_ORDER = {
    # index of (R, G, B) within each format's channels
    PixelFormat.BGRA: (2, 1, 0),
    PixelFormat.RGB: (0, 1, 2),
    PixelFormat.BGR: (2, 1, 0),
}


def convert_format(frame: Frame, target: PixelFormat) -> Frame:
    """Reorder channels losslessly; alpha is dropped when leaving BGRA.

    Conversions into BGRA synthesize an opaque alpha channel.
    """
    if frame.format is target:
        return frame
    src_r, src_g, src_b = _CHANNEL_ORDER[frame.format]
    rgb = frame.pixels[:, :, [src_r, src_g, src_b]]
    if target is PixelFormat.RGB:
        out = rgb
    elif target is PixelFormat.BGR:
        out = rgb[:, :, ::-1]
    else:  # BGRA
        alpha = np.full((frame.height, frame.width, 1), 255, dtype=np.uint8)
        out = np.concatenate([rgb[:, :, ::-1], alpha], axis=2)
    return Frame(
        width=frame.width,
        height=frame.height,
        pixels=np.ascontiguousarray(out),
        format=target,
        timestamp_ns=frame.timestamp_ns,
        source_id=frame.source_id,
    )


class FrameSource:
    """Base class: owns a monotonic timestamp sequence and a closed flag.

    A source belongs to exactly one consumer; it may be handed between
    threads but never shared. ``next_frame`` blocks up to ``timeout``
    seconds where pacing applies.
    """

    source_id = "source"

    def __init__(self):
        self._closed = False
        self._last_ts = 0

    def _stamp(self) -> int:
        # monotonic_ns can repeat between rapid calls; force strict increase
        ts = time.monotonic_ns()
        if ts <= self._last_ts:
            ts = self._last_ts + 1
        self._last_ts = ts
        return ts

    def _check_open(self):
        if self._closed:
            raise SourceClosed(f"{self.source_id} is closed")

    def next_frame(self, timeout: float | None = None) -> Frame:
        raise NotImplementedError

    def close(self):
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class SyntheticSource(FrameSource):
    """Seeded pseudo-random RGB texture; the (seed, width, height) triple
    fully determines the emitted pixel sequence."""

    def __init__(self, seed: int, width: int, height: int):
        super().__init__()
        if width < 1 or height < 1:
            raise ValueError("synthetic dimensions must be >= 1")
        self.seed = seed
        self.width = width
        self.height = height
        self.source_id = f"synthetic:{seed}x{width}x{height}"
        self._rng = np.random.default_rng(seed)

    def next_frame(self, timeout: float | None = None) -> Frame:
        self._check_open()
        pixels = self._rng.integers(0, 256, size=(self.height, self.width, 3),
                                    dtype=np.uint8)
        return Frame(
            width=self.width, height=self.height, pixels=pixels,
            format=PixelFormat.RGB, timestamp_ns=self._stamp(),
            source_id=self.source_id,
        )


class ReplaySource(FrameSource):
    """Cycles the decodable images of a directory in lexicographic filename
    order, pacing emission by ``interval_ms``."""

    def __init__(self, directory, interval_ms: float = 0.0):
        super().__init__()
        self.directory = Path(directory)
        self.interval_ms = float(interval_ms)
        self.source_id = f"replay:{self.directory}"
        try:
            self._files = sorted(
                p for p in self.directory.iterdir()
                if p.is_file() and p.suffix.lower() in REPLAY_EXTENSIONS
            )
        except OSError as exc:
            raise DecodeFailure(
                f"cannot read replay directory {self.directory}: {exc}") from exc
        if not self._files:
            raise DecodeFailure(f"no replayable images in {self.directory}")
        self._index = 0
        self._last_emit = 0.0

    def _decode(self, path: Path) -> np.ndarray:
        from PIL import Image

        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)

    def next_frame(self, timeout: float | None = None) -> Frame:
        self._check_open()
        if self.interval_ms > 0:
            wait = self._last_emit + self.interval_ms / 1000.0 - time.monotonic()
            if wait > 0:
                if timeout is not None and wait > timeout:
                    raise TimeoutError(
                        f"next frame due in {wait:.3f}s, timeout {timeout:.3f}s")
                time.sleep(wait)
        # skip unreadable files with a warning; give up only if none decode
        for _ in range(len(self._files)):
            path = self._files[self._index]
            self._index = (self._index + 1) % len(self._files)
            try:
                pixels = self._decode(path)
            except Exception as exc:
                logger.warning("skipping unreadable replay image %s: %s", path, exc)
                continue
            self._last_emit = time.monotonic()
            return Frame(
                width=pixels.shape[1], height=pixels.shape[0], pixels=pixels,
                format=PixelFormat.RGB, timestamp_ns=self._stamp(),
                source_id=self.source_id,
            )
        raise DecodeFailure(f"no decodable images left in {self.directory}")


class ScreenSource(FrameSource):
    """Live capture of a screen region via mss, emitting BGRA frames.

    Optional adapter: everything else in the package works without a
    display. On a transient grab failure the last good frame is re-emitted;
    with no last good frame the failure surfaces as SourceClosed.
    """

    def __init__(self, region: CaptureRegion):
        super().__init__()
        self.region = region
        self.source_id = f"screen:{region.left},{region.top},{region.right},{region.bottom}"
        try:
            import mss
        except ImportError as exc:
            raise SourceClosed("screen capture requires the mss package") from exc
        try:
            self._sct = mss.mss()
        except Exception as exc:
            raise SourceClosed(f"cannot open screen capture: {exc}") from exc
        self._last_good: Frame | None = None

    def next_frame(self, timeout: float | None = None) -> Frame:
        self._check_open()
        monitor = {
            "left": self.region.left, "top": self.region.top,
            "width": self.region.width, "height": self.region.height,
        }
        try:
            shot = self._sct.grab(monitor)
            pixels = np.ascontiguousarray(np.asarray(shot, dtype=np.uint8))
        except Exception as exc:
            if self._last_good is not None:
                logger.warning("screen grab failed, re-emitting last frame: %s", exc)
                return self._last_good
            raise SourceClosed(f"screen grab failed: {exc}") from exc
        frame = Frame(
            width=pixels.shape[1], height=pixels.shape[0], pixels=pixels,
            format=PixelFormat.BGRA, timestamp_ns=self._stamp(),
            source_id=self.source_id,
        )
        self._last_good = frame
        return frame

    def close(self):
        if not self._closed:
            try:
                self._sct.close()
            except Exception:
                pass
        super().close()


def open_source(spec: str, interval_ms: float = 0.0,
                region: CaptureRegion | None = None) -> FrameSource:
    """Parse a ``--source`` style spec string into a live source.

    Accepted forms: ``screen``, ``replay:<dir>``, ``synthetic:<seed>x<W>x<H>``.
    """
    if spec == "screen":
        if region is None:
            raise ValueError("screen source requires a capture region")
        return ScreenSource(region)
    if spec.startswith("replay:"):
        return ReplaySource(spec.split(":", 1)[1], interval_ms=interval_ms)
    if spec.startswith("synthetic:"):
        parts = spec.split(":", 1)[1].split("x")
        if len(parts) != 3:
            raise ValueError(f"bad synthetic spec {spec!r}, want synthetic:<seed>x<W>x<H>")
        seed, width, height = (int(p) for p in parts)
        return SyntheticSource(seed, width, height)
    raise ValueError(f"unknown source spec {spec!r}")


def encode_png(frame: Frame, compress_level: int = 1) -> bytes:
    """Encode a frame as PNG bytes (RGB).

    Low compression by default: stream consumers prefer latency over size.
    """
    import io

    from PIL import Image

    rgb = convert_format(frame, PixelFormat.RGB)
    buf = io.BytesIO()
    Image.fromarray(rgb.pixels, "RGB").save(buf, format="PNG",
                                            compress_level=compress_level)
    return buf.getvalue()
