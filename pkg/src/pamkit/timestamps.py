"""RFC 3339 UTC timestamps, "Z" suffix only.

Canonical hashing requires one textual form per instant, so offsets
other than "Z" are rejected and fractional seconds are capped at
microsecond precision. Values are carried as validated strings; parse
on demand for arithmetic.
"""

from __future__ import annotations

import re
from datetime import datetime, timezone

_TIMESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d{1,6})?Z$")


def is_valid_timestamp(value: str) -> bool:
    if not isinstance(value, str) or not _TIMESTAMP_RE.match(value):
        return False
    try:
        parse_timestamp(value)
    except ValueError:
        return False
    return True


def parse_timestamp(value: str) -> datetime:
    """Parse to an aware UTC datetime; raises ValueError on bad input."""
    match = _TIMESTAMP_RE.match(value)
    if not match:
        raise ValueError(f"not an RFC 3339 UTC timestamp: {value!r}")
    micro = int(match.group(1)[1:].ljust(6, "0")) if match.group(1) else 0
    # Field slicing; the regex fixed the layout and the constructor
    # still range-checks (rejecting e.g. month 13).
    return datetime(
        int(value[0:4]), int(value[5:7]), int(value[8:10]),
        int(value[11:13]), int(value[14:16]), int(value[17:19]),
        micro, tzinfo=timezone.utc,
    )


def format_timestamp(dt: datetime) -> str:
    """Render an aware datetime as canonical text (second precision
    unless sub-second information is present)."""
    dt = dt.astimezone(timezone.utc)
    base = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if dt.microsecond:
        return f"{base}.{dt.microsecond:06d}".rstrip("0") + "Z"
    return base + "Z"


def now_utc() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)
