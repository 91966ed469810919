"""Small shared helpers: ids, clocks, atomic file writes."""

from __future__ import annotations

import os
import secrets
import tempfile
import time
from datetime import datetime, timezone


def new_id128() -> str:
    """Fresh 128-bit identifier, lowercase hex (32 chars)."""
    return secrets.token_hex(16)


def new_token() -> bytes:
    """Fresh 256-bit bearer capability token."""
    return secrets.token_bytes(32)


def now_ms() -> int:
    """Current UTC time in epoch milliseconds."""
    return int(time.time() * 1000)


def ms_to_iso(ms: int) -> str:
    """Epoch milliseconds to ISO-8601 UTC string."""
    dt = datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"


def iso_to_ms(text: str) -> int:
    """ISO-8601 (with optional trailing Z) to epoch milliseconds."""
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def atomic_write(path: str, data: bytes) -> None:
    """Whole-file atomic replace: write to a temp file in the same
    directory, fsync, then rename over the destination."""
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
