"""Conformance checker for chat worker executables.

Any executable honoring the newline-delimited JSON protocol (see
``scopeloop.chat``) can serve as a chat backend. This script exercises the
handshake, prompt streaming, message-size cap and shutdown behavior:

    python -m scopeloop.chat_conformance [command args...]

With no arguments it checks the bundled mock worker. Exit code 0 iff every
check passes.
"""

import argparse
import json
import subprocess
import sys
import time

MAX_MESSAGE_BYTES = 1 << 20
CLOSE_DEADLINE_S = 2.0


def _check(results: list, name: str, ok: bool, detail: str = ""):
    results.append(ok)
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail and not ok else ""
    print(f"[{status}] {name}{suffix}")


def run_checks(command: list) -> bool:
    results: list = []
    proc = subprocess.Popen(command, stdin=subprocess.PIPE,
                            stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
                            text=True, bufsize=1)
    try:
        def read_line(timeout_s: float = 5.0):
            # the worker must answer promptly; a blocking read with a dead
            # child would hang the checker, so poll
            deadline = time.monotonic() + timeout_s
            while time.monotonic() < deadline:
                line = proc.stdout.readline()
                if line:
                    return line
                if proc.poll() is not None:
                    return ""
            return ""

        first = read_line()
        ok = False
        try:
            ok = json.loads(first).get("type") == "ready"
        except (json.JSONDecodeError, AttributeError):
            pass
        _check(results, "handshake: first message is ready", ok, repr(first[:80]))

        proc.stdin.write(json.dumps(
            {"type": "prompt", "text": "describe this field"}) + "\n")
        proc.stdin.flush()
        chunks = []
        done = False
        oversize = False
        parse_fail = False
        while True:
            line = read_line()
            if not line:
                break
            if len(line.encode()) > MAX_MESSAGE_BYTES:
                oversize = True
            try:
                message = json.loads(line)
            except json.JSONDecodeError:
                parse_fail = True
                break
            if message.get("type") == "token":
                chunks.append(message.get("text", ""))
            elif message.get("type") == "done":
                done = True
                break
            else:
                parse_fail = True
                break
        _check(results, "stream: every line parses standalone", not parse_fail)
        _check(results, "stream: terminal done received", done)
        _check(results, "stream: at least 5 token chunks", len(chunks) >= 5,
               f"got {len(chunks)}")
        _check(results, "stream: reassembled text nonempty",
               bool("".join(chunks).strip()))
        _check(results, "stream: no message exceeds 1 MiB", not oversize)

        # determinism: same prompt twice -> same bytes
        proc.stdin.write(json.dumps(
            {"type": "prompt", "text": "describe this field"}) + "\n")
        proc.stdin.flush()
        second = []
        while True:
            line = read_line()
            if not line:
                break
            message = json.loads(line)
            if message.get("type") == "done":
                break
            second.append(message.get("text", ""))
        _check(results, "determinism: repeated prompt streams identical bytes",
               "".join(second) == "".join(chunks))

        proc.stdin.write('{"type": "close"}\n')
        proc.stdin.flush()
        t0 = time.monotonic()
        try:
            proc.wait(timeout=CLOSE_DEADLINE_S)
            elapsed = time.monotonic() - t0
            _check(results, f"shutdown: exits within {CLOSE_DEADLINE_S}s "
                            f"of close", True, f"{elapsed:.2f}s")
        except subprocess.TimeoutExpired:
            _check(results, f"shutdown: exits within {CLOSE_DEADLINE_S}s of close",
                   False)
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()
    return all(results)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="check a chat worker executable against the wire protocol")
    parser.add_argument("command", nargs="*",
                        help="worker command (default: the bundled mock)")
    args = parser.parse_args(argv)
    command = args.command or [sys.executable, "-m", "scopeloop.chat_worker",
                               "mock"]
    print(f"checking: {' '.join(command)}")
    return 0 if run_checks(command) else 1


if __name__ == "__main__":
    sys.exit(main())
