"""Wire formats and file I/O for artifacts.

Two formats: human-readable canonical JSON (".pam",
application/pam+json) and compact binary CBOR (".pam.cbor",
application/pam+cbor). CBOR files start with the 4-byte magic header
0x50 0x41 0x4D 0x01; JSON files carry no magic so they stay plain
JSON. The header is framing only: it is excluded from every hash and
signature.
"""

from __future__ import annotations

import json
from enum import Enum
from pathlib import Path

from . import cbor
from .canonical import canonical_bytes
from .errors import DecodeError
from .model import MemoryArtifact, artifact_from_record

MAGIC_HEADER = bytes([0x50, 0x41, 0x4D, 0x01])
_MAGIC_NAME = MAGIC_HEADER[:3]  # "PAM"; any leading match is treated as binary

MEDIA_TYPE_JSON = "application/pam+json"
MEDIA_TYPE_CBOR = "application/pam+cbor"

EXTENSION_JSON = ".pam"
EXTENSION_CBOR = ".pam.cbor"


class WireFormat(Enum):
    JSON = "json"
    CBOR = "cbor"

    @property
    def media_type(self) -> str:
        return MEDIA_TYPE_JSON if self is WireFormat.JSON else MEDIA_TYPE_CBOR

    @property
    def extension(self) -> str:
        return EXTENSION_JSON if self is WireFormat.JSON else EXTENSION_CBOR


def encode_artifact(artifact: MemoryArtifact, format: WireFormat = WireFormat.JSON) -> bytes:
    """Deterministic bytes of the artifact in the requested format."""
    record = artifact.to_record()
    if format is WireFormat.JSON:
        return canonical_bytes(record)
    return MAGIC_HEADER + cbor.encode(record)


def decode_artifact(data: bytes) -> tuple[MemoryArtifact, WireFormat]:
    """Sniff the format and parse. Validation is NOT implied; run
    validate_envelope / verify_artifact separately."""
    if not data:
        raise DecodeError("UNKNOWN_FORMAT", "empty input")
    if data[:3] == _MAGIC_NAME:
        if data[:4] != MAGIC_HEADER:
            raise DecodeError(
                "UNKNOWN_FORMAT",
                f"magic names format version 0x{data[3]:02x}, expected 0x01",
            )
        record = cbor.decode(data[4:])
        return artifact_from_record(record), WireFormat.CBOR
    try:
        record = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError("MALFORMED_JSON", str(exc)) from None
    return artifact_from_record(record), WireFormat.JSON


def format_for_path(path: str | Path) -> WireFormat:
    return WireFormat.CBOR if str(path).endswith(EXTENSION_CBOR) else WireFormat.JSON


def write_artifact(
    artifact: MemoryArtifact, path: str | Path, format: WireFormat | None = None
) -> WireFormat:
    """Write to disk, picking the format from the extension by default."""
    if format is None:
        format = format_for_path(path)
    Path(path).write_bytes(encode_artifact(artifact, format))
    return format


def read_artifact(path: str | Path) -> tuple[MemoryArtifact, WireFormat]:
    return decode_artifact(Path(path).read_bytes())
