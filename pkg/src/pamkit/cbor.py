"""Deterministic CBOR subset codec for the binary wire format.

Encodes the same value trees as the canonical JSON serializer: maps
with string keys, arrays, text, booleans, null, integers and doubles.
Encoding is deterministic: definite lengths only, minimal-length
integer heads, map keys sorted bytewise (which for UTF-8 equals the
code-point order canonical JSON uses), and floats always as binary64.

Hash-reference compaction: strings in the fixed reference shapes
("blake3:" + 64 hex, "ed25519:" + 128 hex, "ed25519-pub:" + 64 hex)
are stored as short byte strings with a one-byte kind prefix and
expanded back to the identical text on decode. This is bijective, so
round trips are exact; it is where most of the binary format's size
advantage comes from.
"""

from __future__ import annotations

import re
import struct
from typing import Any

from .errors import CanonicalizationError, DecodeError

__all__ = ["encode", "decode"]

_MAJOR_UINT = 0
_MAJOR_NEGINT = 1
_MAJOR_BYTES = 2
_MAJOR_TEXT = 3
_MAJOR_ARRAY = 4
_MAJOR_MAP = 5
_MAJOR_SIMPLE = 7

_FLOAT64_HEAD = 0xFB
_FALSE, _TRUE, _NULL = 0xF4, 0xF5, 0xF6

_pack_f64 = struct.Struct(">d").pack

# (kind byte, text prefix, raw byte length)
_REF_KINDS = (
    (0x01, "blake3:", 32),
    (0x02, "ed25519:", 64),
    (0x03, "ed25519-pub:", 32),
)
_REF_RES = [
    (kind, prefix, size, re.compile(rf"^{re.escape(prefix)}[0-9a-f]{{{2 * size}}}$"))
    for kind, prefix, size in _REF_KINDS
]
_REF_BY_KIND = {kind: (prefix, size) for kind, prefix, size in _REF_KINDS}


def _head(major: int, arg: int) -> bytes:
    base = major << 5
    if arg < 24:
        return bytes([base | arg])
    if arg < 0x100:
        return bytes([base | 24, arg])
    if arg < 0x10000:
        return bytes([base | 25]) + arg.to_bytes(2, "big")
    if arg < 0x100000000:
        return bytes([base | 26]) + arg.to_bytes(4, "big")
    if arg < 0x10000000000000000:
        return bytes([base | 27]) + arg.to_bytes(8, "big")
    raise CanonicalizationError("INT_RANGE", f"integer argument too large: {arg}")


def _encode_str(s: str, out: list) -> None:
    for kind, prefix, size, pattern in _REF_RES:
        if len(s) == len(prefix) + 2 * size and pattern.match(s):
            raw = bytes([kind]) + bytes.fromhex(s[len(prefix):])
            out.append(_head(_MAJOR_BYTES, len(raw)))
            out.append(raw)
            return
    enc = s.encode("utf-8")
    out.append(_head(_MAJOR_TEXT, len(enc)))
    out.append(enc)


def _encode_value(value: Any, out: list) -> None:
    if value is None:
        out.append(bytes([_NULL]))
    elif value is True:
        out.append(bytes([_TRUE]))
    elif value is False:
        out.append(bytes([_FALSE]))
    elif isinstance(value, str):
        _encode_str(value, out)
    elif isinstance(value, int):
        if value >= 0:
            out.append(_head(_MAJOR_UINT, value))
        else:
            out.append(_head(_MAJOR_NEGINT, -1 - value))
    elif isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise CanonicalizationError("NON_FINITE_NUMBER", f"cannot encode {value!r}")
        out.append(bytes([_FLOAT64_HEAD]))
        out.append(_pack_f64(value))
    elif isinstance(value, dict):
        for key in value:
            if not isinstance(key, str):
                raise CanonicalizationError("NON_STRING_KEY", f"map key {key!r} is not a string")
        out.append(_head(_MAJOR_MAP, len(value)))
        for key in sorted(value.keys()):
            _encode_str(key, out)
            _encode_value(value[key], out)
    elif isinstance(value, (list, tuple)):
        out.append(_head(_MAJOR_ARRAY, len(value)))
        for item in value:
            _encode_value(item, out)
    else:
        raise CanonicalizationError(
            "UNSUPPORTED_TYPE", f"cannot encode value of type {type(value).__name__}"
        )


def encode(value: Any) -> bytes:
    out: list = []
    _encode_value(value, out)
    return b"".join(out)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise DecodeError("MALFORMED_CBOR", "truncated input")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def byte(self) -> int:
        return self.take(1)[0]


def _read_arg(reader: _Reader, info: int) -> int:
    if info < 24:
        return info
    if info == 24:
        return reader.byte()
    if info == 25:
        return int.from_bytes(reader.take(2), "big")
    if info == 26:
        return int.from_bytes(reader.take(4), "big")
    if info == 27:
        return int.from_bytes(reader.take(8), "big")
    raise DecodeError("MALFORMED_CBOR", f"indefinite or reserved length info {info}")


def _decode_value(reader: _Reader) -> Any:
    initial = reader.byte()
    major = initial >> 5
    info = initial & 0x1F

    if major == _MAJOR_UINT:
        return _read_arg(reader, info)
    if major == _MAJOR_NEGINT:
        return -1 - _read_arg(reader, info)
    if major == _MAJOR_BYTES:
        raw = reader.take(_read_arg(reader, info))
        if not raw:
            raise DecodeError("MALFORMED_CBOR", "empty byte string")
        ref = _REF_BY_KIND.get(raw[0])
        if ref is None or len(raw) != 1 + ref[1]:
            raise DecodeError("MALFORMED_CBOR", f"unknown byte-string kind 0x{raw[0]:02x}")
        return ref[0] + raw[1:].hex()
    if major == _MAJOR_TEXT:
        raw = reader.take(_read_arg(reader, info))
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("MALFORMED_CBOR", f"invalid UTF-8 text: {exc}") from None
    if major == _MAJOR_ARRAY:
        return [_decode_value(reader) for _ in range(_read_arg(reader, info))]
    if major == _MAJOR_MAP:
        result = {}
        for _ in range(_read_arg(reader, info)):
            key = _decode_value(reader)
            if not isinstance(key, str):
                raise DecodeError("MALFORMED_CBOR", f"non-text map key {key!r}")
            result[key] = _decode_value(reader)
        return result
    if major == _MAJOR_SIMPLE:
        if info == 20:
            return False
        if info == 21:
            return True
        if info == 22:
            return None
        if info == 25:
            return float(struct.unpack(">e", reader.take(2))[0])
        if info == 26:
            return float(struct.unpack(">f", reader.take(4))[0])
        if info == 27:
            return float(struct.unpack(">d", reader.take(8))[0])
        raise DecodeError("MALFORMED_CBOR", f"unsupported simple value {info}")
    raise DecodeError("MALFORMED_CBOR", f"unsupported major type {major}")


def decode(data: bytes) -> Any:
    reader = _Reader(data)
    value = _decode_value(reader)
    if reader.pos != len(data):
        raise DecodeError("MALFORMED_CBOR", f"{len(data) - reader.pos} trailing bytes")
    return value
