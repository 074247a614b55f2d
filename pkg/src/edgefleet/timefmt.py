"""Instants are integer epoch milliseconds internally and RFC 3339 UTC strings on disk."""

from __future__ import annotations

from datetime import datetime, timezone
from functools import lru_cache

from .errors import MalformedField

MINUTE_MS = 60_000
HOUR_MS = 60 * MINUTE_MS
DAY_MS = 24 * HOUR_MS


@lru_cache(maxsize=8192)
def format_instant(ms: int) -> str:
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    frac = ms % 1000
    if frac:
        return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{frac:03d}Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_instant(text: str) -> int:
    """Parse an RFC 3339 timestamp (or bare epoch milliseconds) into epoch ms.

    Naive timestamps are taken to be UTC.
    """
    s = text.strip()
    if not s:
        raise MalformedField("empty timestamp")
    if s.lstrip("-").isdigit():
        return int(s)
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError as exc:
        raise MalformedField(f"unparseable timestamp {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86_400 + delta.seconds) * 1000 + delta.microseconds // 1000
