"""Model registry: descriptor lookup, download cache and backend loading.

Remote model files are cached under a directory keyed by their SHA-256
checksum. Cache hits are re-verified before use, so a corrupted cache entry
is evicted and downloaded again (once); if the server copy is also bad the
resolve fails with ChecksumMismatch rather than loading a broken graph.
"""

import hashlib
import json
import logging
import pathlib
import shutil
import tempfile
import urllib.error
import urllib.request

from .backends import (
    InferenceBackend,
    MarkerDetector,
    MarkerSegmenter,
    ModelDescriptor,
    NoiseDetector,
    QuadrantClassifier,
    Task,
)
from .errors import ChecksumMismatch, DownloadFailure, UnknownModel, UnsupportedGraph
from .paths import model_cache_dir

logger = logging.getLogger(__name__)

DOWNLOAD_TIMEOUT_S = 60.0
_HASH_CHUNK = 1 << 20

# builtin mock ids -> backend class
_BUILTIN_CLASSES = {
    "quadrant": QuadrantClassifier,
    "marker-detect": MarkerDetector,
    "marker-ki67": MarkerSegmenter,
    "noise-detect": NoiseDetector,
}

DEFAULT_DESCRIPTORS = (
    ModelDescriptor(id="quadrant", task=Task.CLASSIFICATION, tile_size=1024,
                    input_format="RGB"),
    ModelDescriptor(id="marker-detect", task=Task.DETECTION, tile_size=512,
                    input_format="RGB"),
    ModelDescriptor(id="marker-ki67", task=Task.SEGMENTATION, tile_size=1024,
                    input_format="BGR"),
    ModelDescriptor(id="noise-detect", task=Task.DETECTION, tile_size=512,
                    input_format="RGB"),
)


def sha256_file(path: pathlib.Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            chunk = fh.read(_HASH_CHUNK)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


def parse_manifest(text: str) -> list:
    """Parse a JSON model manifest into descriptors.

    Schema: {"models": [{"id", "task", "tile_size", "input_format",
    "source", "path"?, "url"?, "sha256"?}, ...]}
    """
    doc = json.loads(text)
    out = []
    for entry in doc.get("models", []):
        try:
            out.append(ModelDescriptor(
                id=entry["id"],
                task=Task(entry["task"]),
                tile_size=int(entry["tile_size"]),
                input_format=entry.get("input_format", "RGB"),
                source=entry.get("source", "builtin"),
                path=entry.get("path"),
                url=entry.get("url"),
                sha256=entry.get("sha256"),
            ))
        except KeyError as exc:
            raise ValueError(f"manifest entry missing field {exc}") from exc
    return out


def builtin_backend(descriptor: ModelDescriptor) -> InferenceBackend:
    """Instantiate the builtin mock named by the descriptor id.

    Descriptors may override tile_size/input_format (tests use small tiles),
    so the id alone selects the implementation class.
    """
    cls = _BUILTIN_CLASSES.get(descriptor.id)
    if cls is None:
        raise UnknownModel(f"no builtin model named {descriptor.id!r}")
    return cls(descriptor)


class ModelRegistry:
    def __init__(self, cache_dir=None, descriptors=DEFAULT_DESCRIPTORS):
        self.cache_dir = pathlib.Path(cache_dir) if cache_dir else model_cache_dir()
        self._descriptors = {d.id: d for d in descriptors}

    def list(self) -> list:
        return sorted(self._descriptors.values(), key=lambda d: d.id)

    def get(self, model_id: str) -> ModelDescriptor:
        try:
            return self._descriptors[model_id]
        except KeyError:
            raise UnknownModel(f"unknown model {model_id!r}") from None

    def add(self, descriptor: ModelDescriptor):
        self._descriptors[descriptor.id] = descriptor

    def load_manifest(self, path) -> int:
        descriptors = parse_manifest(pathlib.Path(path).read_text())
        for d in descriptors:
            self.add(d)
        return len(descriptors)

    # -- cache ---------------------------------------------------------

    def cached_path(self, descriptor: ModelDescriptor) -> pathlib.Path:
        suffix = pathlib.Path(descriptor.url.split("?")[0]).suffix or ".bin"
        return self.cache_dir / f"{descriptor.sha256}{suffix}"

    def fetch(self, descriptor: ModelDescriptor) -> pathlib.Path:
        """Return a verified local copy of a remote model file.

        A valid cache entry is returned with zero network I/O. An invalid
        one is evicted and fetched again exactly once.
        """
        if descriptor.source != "remote":
            raise ValueError(f"fetch() is for remote models, not {descriptor.source}")
        target = self.cached_path(descriptor)
        if target.exists():
            if sha256_file(target) == descriptor.sha256:
                return target
            logger.warning("cache entry %s corrupt, evicting", target.name)
            target.unlink()
        self._download(descriptor.url, target)
        actual = sha256_file(target)
        if actual != descriptor.sha256:
            target.unlink()
            raise ChecksumMismatch(
                f"model {descriptor.id}: expected sha256 {descriptor.sha256}, "
                f"downloaded file hashes to {actual}"
            )
        return target

    def _download(self, url: str, target: pathlib.Path):
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=target.parent, suffix=".part")
        tmp = pathlib.Path(tmp_name)
        try:
            with open(fd, "wb") as out, urllib.request.urlopen(
                    url, timeout=DOWNLOAD_TIMEOUT_S) as resp:
                shutil.copyfileobj(resp, out)
            tmp.replace(target)
        except (urllib.error.URLError, OSError) as exc:
            tmp.unlink(missing_ok=True)
            raise DownloadFailure(f"downloading {url} failed: {exc}") from exc

    # -- loading -------------------------------------------------------

    def resolve(self, model_id: str) -> InferenceBackend:
        """Return a ready inference backend for the given model id."""
        descriptor = self.get(model_id)
        if descriptor.source == "builtin":
            return builtin_backend(descriptor)
        if descriptor.source == "file":
            return load_graph(pathlib.Path(descriptor.path), descriptor)
        path = self.fetch(descriptor)
        return load_graph(path, descriptor)


def load_graph(path: pathlib.Path, descriptor: ModelDescriptor) -> InferenceBackend:
    if not path.exists():
        raise DownloadFailure(f"model file {path} does not exist")
    if path.suffix != ".onnx":
        raise UnsupportedGraph(f"cannot load {path.name}: only .onnx graphs supported")
    try:
        import onnxruntime  # noqa: F401
    except ImportError:
        raise UnsupportedGraph(
            "onnxruntime is not installed; install it to run non-builtin models"
        ) from None
    return OnnxBackend(descriptor, path)


class OnnxBackend(InferenceBackend):
    """Thin onnxruntime wrapper. Assumes NCHW float input in [0, 1]."""

    reentrant = True

    def __init__(self, descriptor: ModelDescriptor, path: pathlib.Path):
        super().__init__(descriptor)
        import onnxruntime

        self._session = onnxruntime.InferenceSession(
            str(path), providers=["CPUExecutionProvider"])
        self._input_name = self._session.get_inputs()[0].name

    def _prepare(self, tile):
        x = tile.astype("float32") / 255.0
        return x.transpose(2, 0, 1)[None]

    def classify(self, tile):
        import numpy as np

        from .backends import SoftmaxVector

        (logits,) = self._session.run(None, {self._input_name: self._prepare(tile)})
        row = np.asarray(logits).reshape(-1)
        exps = np.exp(row - row.max())
        probs = exps / exps.sum()
        names = tuple(f"class_{i}" for i in range(probs.size))
        return SoftmaxVector(probs=tuple(float(p) for p in probs), class_names=names)

    def detect(self, tile):
        from .backends import Box, Detection

        outputs = self._session.run(None, {self._input_name: self._prepare(tile)})
        if len(outputs) < 3:
            raise UnsupportedGraph("detector graph must output boxes, scores, labels")
        boxes, scores, labels = outputs[0], outputs[1], outputs[2]
        out = []
        for (x1, y1, x2, y2), score, label in zip(boxes, scores, labels):
            out.append(Detection(
                box=Box(float(x1), float(y1), float(x2 - x1), float(y2 - y1)),
                class_id=int(label),
                score=float(score),
            ))
        return out

    def segment(self, tile):
        raise UnsupportedGraph("segmentation graphs are not supported yet")
