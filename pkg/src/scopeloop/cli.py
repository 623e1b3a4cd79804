"""Command-line entry points: headless runs, the control service, model
listing.

``scopeloop run`` drives the full pipeline without any UI: it processes N
frames from the given source, auto-accepts every aggregation entry, and
optionally exports the session — exactly what CI needs.
"""

import argparse
import logging
import sys

from .errors import ScopeloopError
from .frames import open_source
from .overlay import OverlayStyle, render_result
from .pipelines import analyze_frame
from .registry import ModelRegistry
from .service.api import ControlServer, ServiceState, default_port
from .service.metrics import LatencyStats
from .service.worker import TimingBackend
from .session import AggregateSession, export_session

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scopeloop",
        description="real-time tiled inference over screen regions",
    )
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="headless pipeline run")
    run.add_argument("--source", required=True,
                     help="screen | replay:<dir> | synthetic:<seed>x<W>x<H>")
    run.add_argument("--model", default="quadrant", help="model id")
    run.add_argument("--task", default=None,
                     help="expected task; must match the model")
    run.add_argument("--frames", type=int, default=5, metavar="N")
    run.add_argument("--export", default=None, metavar="DIR",
                     help="export the session under DIR")
    run.add_argument("--threshold", type=float, default=0.0)
    run.add_argument("--overlap", type=int, default=64)
    run.add_argument("--interval-ms", type=float, default=0.0,
                     help="replay pacing interval")
    run.add_argument("--calibrate", type=float, default=None, metavar="MM2",
                     help="measured reference-box area; enables physical units")
    run.add_argument("--bench", action="store_true",
                     help="print latency statistics after the run")

    serve = sub.add_parser("serve", help="start the local control service")
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--source", default="synthetic:0x640x480")
    serve.add_argument("--model", default="quadrant")
    serve.add_argument("--interval-ms", type=float, default=100.0)
    serve.add_argument("--ui-dir", default=None,
                       help="directory of built UI assets to serve at /")

    models = sub.add_parser("models", help="list known models")
    models.add_argument("--manifest", default=None,
                        help="extra model manifest (JSON) to load")
    return parser


def _cmd_run(args) -> int:
    registry = ModelRegistry()
    descriptor = registry.get(args.model)
    if args.task is not None and args.task != descriptor.task.value:
        print(f"error: model {args.model} is a {descriptor.task.value} model, "
              f"not {args.task}", file=sys.stderr)
        return 2
    if args.frames < 1:
        print("error: --frames must be >= 1", file=sys.stderr)
        return 2

    backend = TimingBackend(registry.resolve(args.model))
    session = AggregateSession()
    stats = LatencyStats()
    overhead_total = 0.0
    import time as _time

    with open_source(args.source, interval_ms=args.interval_ms) as source:
        for i in range(args.frames):
            frame = source.next_frame()
            t0 = _time.perf_counter()
            backend.drain_seconds()
            result = analyze_frame(frame, backend, overlap=args.overlap,
                                   threshold=args.threshold)
            annotated = render_result(result.frame, result, OverlayStyle())
            cycle_ms = (_time.perf_counter() - t0) * 1000.0
            adapter_ms = backend.drain_seconds() * 1000.0
            stats.add(cycle_ms)
            overhead_total += cycle_ms - adapter_ms

            if i == 0 and args.calibrate is not None:
                session.calibrate(args.calibrate, (frame.width, frame.height))
            pending = session.propose_entry(frame, annotated, result,
                                            model_id=args.model)
            session.commit_entry(pending, "accept")
    backend.close()

    print(f"processed {args.frames} frames with {args.model} "
          f"({descriptor.task.value})")
    if args.export:
        manifest = export_session(session, args.export)
        print(f"exported {manifest.entry_count} entries to {manifest.directory}")
    if args.bench:
        snap = stats.snapshot()
        print(f"cycle latency over last {len(snap['window'])} frames: "
              f"mean {snap['mean_ms']:.1f} ms, stddev {snap['stddev_ms']:.1f} ms")
        print(f"mean pipeline overhead (excl. adapter): "
              f"{overhead_total / args.frames:.1f} ms")
    return 0


def _cmd_serve(args) -> int:
    state = ServiceState(source_spec=args.source, model_id=args.model,
                         ui_dir=args.ui_dir, interval_ms=args.interval_ms)
    port = args.port if args.port is not None else default_port()
    server = ControlServer(state, port=port)
    # scripts parse this line for the ephemeral port; don't let it sit in
    # a block buffer when stdout is a pipe
    print(f"scopeloop control service on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        server.stop()
    return 0


def _cmd_models(args) -> int:
    registry = ModelRegistry()
    if args.manifest:
        registry.load_manifest(args.manifest)
    for d in registry.list():
        print(f"{d.id:16} {d.task.value:14} tile={d.tile_size:5} "
              f"{d.input_format:4} {d.source}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "serve":
            return _cmd_serve(args)
        return _cmd_models(args)
    except ScopeloopError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
