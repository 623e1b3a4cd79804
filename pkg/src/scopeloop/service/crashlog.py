"""Append-only crash log, one file per day, with a temp-dir fallback."""

import datetime
import json
import sys
import tempfile
import traceback
from pathlib import Path

from ..paths import log_dir


def _entry_text(exc: BaseException, context: dict) -> str:
    now = datetime.datetime.now(datetime.timezone.utc)
    lines = [
        "=" * 60,
        f"time: {now.isoformat()}",
        f"context: {json.dumps(context, default=str, sort_keys=True)}",
        "traceback:",
        "".join(traceback.format_exception(type(exc), exc, exc.__traceback__)),
        "",
    ]
    return "\n".join(lines)


def log_crash(exc: BaseException, context: dict | None = None) -> Path:
    """Append the error chain + context snapshot; returns the file path."""
    today = datetime.date.today().strftime("%Y%m%d")
    name = f"crash_{today}.log"
    text = _entry_text(exc, context or {})
    primary = log_dir() / name
    try:
        primary.parent.mkdir(parents=True, exist_ok=True)
        with open(primary, "a") as fh:
            fh.write(text)
        return primary
    except OSError:
        fallback = Path(tempfile.gettempdir()) / "scopeloop-logs" / name
        fallback.parent.mkdir(parents=True, exist_ok=True)
        with open(fallback, "a") as fh:
            fh.write(text)
        print(f"scopeloop: log dir unwritable, crash logged to {fallback}",
              file=sys.stderr)
        return fallback
