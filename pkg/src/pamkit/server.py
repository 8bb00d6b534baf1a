"""Local HTTP verification service and the JSON payloads it shares
with the CLI.

Endpoints: POST /verify (body: artifact bytes, either wire format),
POST /rehydrate (multipart form: artifact file, config JSON, token
files), GET /artifact (serves the configured artifact). Responses are
byte-identical to the corresponding CLI --json outputs. Binds loopback
by default; this is a verification utility, not a hardened service.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from email.parser import BytesParser
from email.policy import HTTP
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .capability import RevocationList, token_from_record
from .errors import PamError
from .keys import KeyRegistry
from .model import MemoryArtifact, validate_envelope
from .provenance import verify_artifact
from .rehydrate import RehydrationConfig, RehydrationResult, TaskContext, rehydrate
from .serialization import decode_artifact, format_for_path
from .timestamps import now_utc, parse_timestamp


def render_json(payload: dict) -> str:
    """The one JSON rendering used by CLI --json and HTTP responses."""
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def build_verify_payload(artifact: MemoryArtifact, registry: KeyRegistry) -> dict:
    envelope = validate_envelope(artifact)
    verification = verify_artifact(artifact, registry)
    return {
        "report_version": "1",
        "kind": "verify",
        "ok": envelope.ok and verification.ok,
        "envelope": envelope.to_record(),
        "verification": verification.to_record(),
    }


def build_rehydrate_payload(result: RehydrationResult) -> dict:
    return {
        "report_version": "1",
        "kind": "rehydrate",
        "ok": result.ok,
        "framed_text": result.framed_text,
        "plan": result.plan.counts(),
        "quarantined": [
            {"entry_id": entry_id, "reason": reason} for entry_id, reason in result.quarantined
        ],
        "warnings": list(result.warnings),
        "verification": result.verification.to_record(),
        "envelope": result.envelope.to_record(),
    }


@dataclass
class ServerConfig:
    artifact_path: Path
    registry: KeyRegistry


def _parse_multipart(content_type: str, body: bytes) -> list[tuple[str, bytes]]:
    """(field name, payload bytes) pairs from a multipart/form-data body."""
    header = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode()
    message = BytesParser(policy=HTTP).parsebytes(header + body)
    if not message.is_multipart():
        raise PamError("BAD_REQUEST", "expected multipart/form-data")
    parts = []
    for part in message.iter_parts():
        name = part.get_param("name", header="content-disposition")
        parts.append((name or "", part.get_payload(decode=True) or b""))
    return parts


def _rehydrate_from_parts(parts: list[tuple[str, bytes]], config: ServerConfig) -> dict:
    artifact_bytes = b""
    config_record: dict = {}
    token_blobs: list[bytes] = []
    for name, payload in parts:
        if name == "artifact":
            artifact_bytes = payload
        elif name == "config":
            config_record = json.loads(payload.decode("utf-8"))
        elif name == "tokens":
            token_blobs.append(payload)
    if not artifact_bytes:
        raise PamError("BAD_REQUEST", "missing artifact part")

    artifact, _ = decode_artifact(artifact_bytes)
    tokens = [token_from_record(json.loads(blob.decode("utf-8"))) for blob in token_blobs]
    now: datetime = (
        parse_timestamp(config_record["now"]) if "now" in config_record else now_utc()
    )
    ctx = TaskContext(text=str(config_record.get("context", "")), now=now)
    cfg = RehydrationConfig(
        token_budget=int(config_record.get("budget", 4096)),
        format_style=str(config_record.get("style", "structured")),
        model_profile=str(config_record.get("model_profile", "default")),
    )
    revocations = RevocationList(
        revoked=frozenset(config_record.get("revoked", [])), updated_at=""
    )
    result = rehydrate(
        artifact,
        tokens,
        str(config_record.get("presenter", "agent:local")),
        ctx,
        cfg,
        config.registry,
        revocations,
        allow_unscoped=bool(config_record.get("allow_unscoped", False)),
    )
    return build_rehydrate_payload(result)


class _Handler(BaseHTTPRequestHandler):
    config: ServerConfig  # set by make_server

    def _send(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, payload: dict) -> None:
        self._send(status, render_json(payload).encode("utf-8"))

    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib signature
        pass  # quiet by default; this is a local utility

    def do_GET(self) -> None:  # noqa: N802 - stdlib naming
        if self.path != "/artifact":
            self._send_json(404, {"error": "NOT_FOUND"})
            return
        try:
            data = self.config.artifact_path.read_bytes()
        except OSError as exc:
            self._send_json(500, {"error": "IO_ERROR", "detail": str(exc)})
            return
        media = (
            "application/pam+cbor"
            if format_for_path(self.config.artifact_path).value == "cbor"
            else "application/pam+json"
        )
        self._send(200, data, media)

    def do_POST(self) -> None:  # noqa: N802 - stdlib naming
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length)
        try:
            if self.path == "/verify":
                artifact, _ = decode_artifact(body)
                self._send_json(200, build_verify_payload(artifact, self.config.registry))
            elif self.path == "/rehydrate":
                parts = _parse_multipart(self.headers.get("Content-Type", ""), body)
                self._send_json(200, _rehydrate_from_parts(parts, self.config))
            else:
                self._send_json(404, {"error": "NOT_FOUND"})
        except PamError as exc:
            self._send_json(400, {"error": exc.code, "detail": str(exc)})
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            self._send_json(400, {"error": "BAD_REQUEST", "detail": str(exc)})


def make_server(
    artifact_path: str | Path,
    registry: KeyRegistry,
    host: str = "127.0.0.1",
    port: int = 8642,
) -> ThreadingHTTPServer:
    config = ServerConfig(artifact_path=Path(artifact_path), registry=registry)
    handler = type("BoundHandler", (_Handler,), {"config": config})
    return ThreadingHTTPServer((host, port), handler)
