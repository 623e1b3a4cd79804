import hashlib
import http.server
import json
import threading

import pytest

from scopeloop.backends import Task
from scopeloop.errors import ChecksumMismatch, DownloadFailure, UnknownModel, UnsupportedGraph
from scopeloop.registry import (
    DEFAULT_DESCRIPTORS,
    ModelDescriptor,
    ModelRegistry,
    load_graph,
    parse_manifest,
    sha256_file,
)

PAYLOAD = b"pretend-model-weights-" * 64


class CountingHandler(http.server.BaseHTTPRequestHandler):
    server_version = "test"
    payload = PAYLOAD
    requests = 0

    def do_GET(self):
        type(self).requests += 1
        body = self.payload
        self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def model_server():
    handler = type("Handler", (CountingHandler,), {"requests": 0, "payload": PAYLOAD})
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server, handler
    server.shutdown()
    thread.join()
    server.server_close()


def remote_descriptor(server, payload=PAYLOAD, model_id="remote-cls"):
    port = server.server_address[1]
    return ModelDescriptor(
        id=model_id, task=Task.CLASSIFICATION, tile_size=512,
        input_format="RGB", source="remote",
        url=f"http://127.0.0.1:{port}/weights.bin",
        sha256=hashlib.sha256(payload).hexdigest(),
    )


class TestBuiltins:
    def test_default_descriptors_present(self):
        registry = ModelRegistry(descriptors=DEFAULT_DESCRIPTORS)
        ids = {d.id for d in registry.list()}
        assert {"quadrant", "marker-detect", "marker-ki67", "noise-detect"} <= ids

    def test_default_tasks_and_tiles(self):
        registry = ModelRegistry(descriptors=DEFAULT_DESCRIPTORS)
        assert registry.get("quadrant").task is Task.CLASSIFICATION
        assert registry.get("quadrant").tile_size == 1024
        assert registry.get("marker-detect").tile_size == 512
        assert registry.get("marker-ki67").input_format == "BGR"

    def test_unknown_model(self):
        registry = ModelRegistry(descriptors=DEFAULT_DESCRIPTORS)
        with pytest.raises(UnknownModel):
            registry.get("does-not-exist")
        with pytest.raises(UnknownModel):
            registry.resolve("does-not-exist")

    def test_resolve_builtin_returns_backend(self, tmp_path):
        registry = ModelRegistry(cache_dir=tmp_path, descriptors=DEFAULT_DESCRIPTORS)
        backend = registry.resolve("quadrant")
        assert backend.descriptor.id == "quadrant"
        backend.close()


class TestManifest:
    def test_parse_round_trip(self):
        text = json.dumps({"models": [{
            "id": "extra", "task": "detection", "tile_size": 256,
            "input_format": "RGB", "source": "remote",
            "url": "http://example.invalid/w.bin", "sha256": "ab" * 32,
        }]})
        descs = parse_manifest(text)
        assert len(descs) == 1
        assert descs[0].task is Task.DETECTION
        assert descs[0].tile_size == 256

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_manifest("not json at all {")
        with pytest.raises(ValueError):
            parse_manifest(json.dumps({"models": [{"id": "x"}]}))

    def test_load_manifest_registers(self, tmp_path):
        path = tmp_path / "models.json"
        path.write_text(json.dumps({"models": [{
            "id": "from-file", "task": "classification", "tile_size": 128,
            "input_format": "RGB", "source": "remote",
            "url": "http://example.invalid/w.bin", "sha256": "cd" * 32,
        }]}))
        registry = ModelRegistry(cache_dir=tmp_path, descriptors=DEFAULT_DESCRIPTORS)
        registry.load_manifest(path)
        assert registry.get("from-file").tile_size == 128


class TestFetchCaching:
    def test_second_fetch_hits_cache(self, tmp_path, model_server):
        server, handler = model_server
        registry = ModelRegistry(cache_dir=tmp_path, descriptors=())
        desc = remote_descriptor(server)
        first = registry.fetch(desc)
        assert first.read_bytes() == PAYLOAD
        assert handler.requests == 1
        second = registry.fetch(desc)
        assert second == first
        assert handler.requests == 1  # cache hit: zero network traffic

    def test_corrupted_cache_entry_refetched_once(self, tmp_path, model_server):
        server, handler = model_server
        registry = ModelRegistry(cache_dir=tmp_path, descriptors=())
        desc = remote_descriptor(server)
        path = registry.fetch(desc)
        assert handler.requests == 1
        # flip a byte on disk to simulate corruption
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        healed = registry.fetch(desc)
        assert handler.requests == 2
        assert healed.read_bytes() == PAYLOAD
        assert sha256_file(healed) == desc.sha256

    def test_bad_server_copy_raises_and_leaves_no_entry(self, tmp_path, model_server):
        server, handler = model_server
        handler.payload = b"tampered"  # will never match desc.sha256
        registry = ModelRegistry(cache_dir=tmp_path, descriptors=())
        desc = remote_descriptor(server)
        with pytest.raises(ChecksumMismatch):
            registry.fetch(desc)
        assert handler.requests == 1
        assert list(tmp_path.iterdir()) == []

    def test_unreachable_host(self, tmp_path):
        registry = ModelRegistry(cache_dir=tmp_path, descriptors=())
        desc = ModelDescriptor(
            id="gone", task=Task.CLASSIFICATION, tile_size=512,
            input_format="RGB", source="remote",
            url="http://127.0.0.1:1/none.bin", sha256="ab" * 32)
        with pytest.raises(DownloadFailure):
            registry.fetch(desc)


class TestGraphLoading:
    def test_non_onnx_suffix_unsupported(self, tmp_path):
        weights = tmp_path / "w.pt"
        weights.write_bytes(b"x")
        desc = ModelDescriptor(
            id="torchy", task=Task.CLASSIFICATION, tile_size=64,
            input_format="RGB", source="file", path=str(weights))
        with pytest.raises(UnsupportedGraph):
            load_graph(weights, desc)

    def test_onnx_without_runtime_unsupported(self, tmp_path, monkeypatch):
        import sys

        monkeypatch.setitem(sys.modules, "onnxruntime", None)
        weights = tmp_path / "w.onnx"
        weights.write_bytes(b"x")
        desc = ModelDescriptor(
            id="graph", task=Task.CLASSIFICATION, tile_size=64,
            input_format="RGB", source="file", path=str(weights))
        with pytest.raises(UnsupportedGraph):
            load_graph(weights, desc)
