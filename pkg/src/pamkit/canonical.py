"""Deterministic canonical JSON bytes.

This is the substrate every hash and signature in the format is
computed over, so the rules are fixed and exhaustive:

- map keys sorted by Unicode code point, no insignificant whitespace,
- strings escaped minimally (backslash, double quote, and control
  characters only; the five short escapes where JSON defines them),
- integers rendered without fraction or exponent,
- floats rendered in the shortest form that round-trips through an
  IEEE 754 double, formatted per the ECMAScript number-to-string
  convention (integral doubles render without a decimal point).

The same value tree always yields the same bytes, and
canonical_bytes(parse(canonical_bytes(v))) == canonical_bytes(v).
"""

from __future__ import annotations

import json
import math
import re
from typing import Any

from .errors import CanonicalizationError

__all__ = ["canonical_bytes", "canonical_str", "format_number", "parse_json"]

_SHORT_ESCAPES = {
    0x08: "\\b",
    0x09: "\\t",
    0x0A: "\\n",
    0x0C: "\\f",
    0x0D: "\\r",
    0x22: '\\"',
    0x5C: "\\\\",
}

_NEEDS_ESCAPE = re.compile(r'[\x00-\x1f"\\]')


def _escape_char(match: "re.Match[str]") -> str:
    cp = ord(match.group())
    esc = _SHORT_ESCAPES.get(cp)
    return esc if esc is not None else f"\\u{cp:04x}"


def _escape_string(s: str) -> str:
    # Fast path: most strings contain nothing that needs escaping.
    if _NEEDS_ESCAPE.search(s) is None:
        return f'"{s}"'
    return f'"{_NEEDS_ESCAPE.sub(_escape_char, s)}"'


def format_number(value: float) -> str:
    """Shortest round-trip decimal form of a double, ECMAScript style."""
    if math.isnan(value) or math.isinf(value):
        raise CanonicalizationError("NON_FINITE_NUMBER", f"cannot serialize {value!r}")
    if value == 0.0:
        return "0"
    sign = "-" if value < 0 else ""
    rep = repr(abs(value))

    # repr() already gives the shortest round-trip digits; reshape them
    # into the ECMAScript layout (no ".0" suffix, "e+21" thresholds).
    if "e" in rep:
        mant, _, exp_s = rep.partition("e")
        exp = int(exp_s)
    else:
        mant, exp = rep, 0
    if "." in mant:
        int_part, _, frac_part = mant.partition(".")
        digits = (int_part + frac_part).lstrip("0")
        exp -= len(frac_part)
    else:
        digits = mant.lstrip("0")
    stripped = digits.rstrip("0")
    exp += len(digits) - len(stripped)
    digits = stripped

    k = len(digits)
    n = exp + k  # value = 0.digits * 10^n
    if k <= n <= 21:
        body = digits + "0" * (n - k)
    elif 0 < n <= 21:
        body = digits[:n] + "." + digits[n:]
    elif -6 < n <= 0:
        body = "0." + "0" * (-n) + digits
    else:
        e = n - 1
        mant_out = digits[0] + ("." + digits[1:] if k > 1 else "")
        body = f"{mant_out}e{'+' if e >= 0 else '-'}{abs(e)}"
    return sign + body


def _write(value: Any, out: list) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, str):
        out.append(_escape_string(value))
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(format_number(value))
    elif isinstance(value, dict):
        keys = list(value.keys())
        for key in keys:
            if not isinstance(key, str):
                raise CanonicalizationError("NON_STRING_KEY", f"map key {key!r} is not a string")
        out.append("{")
        first = True
        for key in sorted(keys):
            if not first:
                out.append(",")
            first = False
            out.append(_escape_string(key))
            out.append(":")
            _write(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        first = True
        for item in value:
            if not first:
                out.append(",")
            first = False
            _write(item, out)
        out.append("]")
    else:
        raise CanonicalizationError(
            "UNSUPPORTED_TYPE", f"cannot canonicalize value of type {type(value).__name__}"
        )


def canonical_str(value: Any) -> str:
    out: list = []
    _write(value, out)
    return "".join(out)


def canonical_bytes(value: Any) -> bytes:
    """UTF-8 canonical JSON bytes of a value tree."""
    try:
        return canonical_str(value).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise CanonicalizationError("INVALID_TEXT", f"not encodable as UTF-8: {exc}") from None


def parse_json(data: bytes | str) -> Any:
    """Plain JSON parse; the inverse direction of canonical_bytes."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(data)
