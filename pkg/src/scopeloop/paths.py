"""Platform-conventional cache and log directories with env overrides."""

import os
import sys
from pathlib import Path

CACHE_ENV = "SCOPELOOP_CACHE_DIR"
LOG_ENV = "SCOPELOOP_LOG_DIR"


def _user_cache_root() -> Path:
    if sys.platform == "win32":
        base = os.environ.get("LOCALAPPDATA", str(Path.home() / "AppData" / "Local"))
        return Path(base)
    if sys.platform == "darwin":
        return Path.home() / "Library" / "Caches"
    return Path(os.environ.get("XDG_CACHE_HOME", str(Path.home() / ".cache")))


def _user_state_root() -> Path:
    if sys.platform == "win32":
        base = os.environ.get("LOCALAPPDATA", str(Path.home() / "AppData" / "Local"))
        return Path(base)
    if sys.platform == "darwin":
        return Path.home() / "Library" / "Logs"
    return Path(os.environ.get("XDG_STATE_HOME", str(Path.home() / ".local" / "state")))


def model_cache_dir() -> Path:
    override = os.environ.get(CACHE_ENV)
    if override:
        return Path(override)
    return _user_cache_root() / "scopeloop" / "models"


def log_dir() -> Path:
    override = os.environ.get(LOG_ENV)
    if override:
        return Path(override)
    return _user_state_root() / "scopeloop" / "logs"
