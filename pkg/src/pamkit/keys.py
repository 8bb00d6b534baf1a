"""Ed25519 key handling: generation, key IDs, registry and key files.

Key IDs are derived from the public key ("ed25519-pub:" + hex), so a
registry lookup by the envelope's signing_key_id is also an implicit
binding check. Secret keys live on disk as raw 32-byte seed files with
owner-only permissions and are never serialized into artifacts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import DecodeError

KEY_ID_PREFIX = "ed25519-pub:"

# Environment variable naming a default secret-key file for the CLI.
KEY_PATH_ENV = "PAM_KEY_FILE"


@dataclass(frozen=True)
class KeyPair:
    key_id: str
    public_key: bytes
    secret_seed: bytes


def key_id_for_public(public_key: bytes) -> str:
    return KEY_ID_PREFIX + public_key.hex()


def keypair_from_seed(seed: bytes) -> KeyPair:
    if len(seed) != 32:
        raise ValueError(f"Ed25519 seed must be 32 bytes, got {len(seed)}")
    private = Ed25519PrivateKey.from_private_bytes(seed)
    public = private.public_key().public_bytes_raw()
    return KeyPair(key_id=key_id_for_public(public), public_key=public, secret_seed=seed)


def generate_keypair() -> KeyPair:
    private = Ed25519PrivateKey.generate()
    return keypair_from_seed(private.private_bytes_raw())


def sign_message(key: KeyPair, message: bytes) -> bytes:
    private = Ed25519PrivateKey.from_private_bytes(key.secret_seed)
    return private.sign(message)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def save_secret_key(path: str | Path, key: KeyPair) -> None:
    path = Path(path)
    path.write_bytes(key.secret_seed)
    os.chmod(path, 0o600)


def load_secret_key(path: str | Path) -> KeyPair:
    seed = Path(path).read_bytes()
    return keypair_from_seed(seed)


class KeyRegistry:
    """Trusted verification keys, looked up by key ID.

    An unknown key ID is a verification failure, never a pass.
    """

    def __init__(self) -> None:
        self._entries: dict[str, tuple[bytes, str]] = {}

    def add(self, public_key: bytes, label: str = "") -> str:
        key_id = key_id_for_public(public_key)
        self._entries[key_id] = (public_key, label)
        return key_id

    def lookup(self, key_id: str) -> bytes | None:
        entry = self._entries.get(key_id)
        return entry[0] if entry else None

    def key_ids(self) -> list[str]:
        return sorted(self._entries)

    def to_record(self) -> dict:
        return {
            key_id: {"public_key_hex": pub.hex(), "label": label}
            for key_id, (pub, label) in sorted(self._entries.items())
        }

    @classmethod
    def from_record(cls, record: dict) -> "KeyRegistry":
        registry = cls()
        if not isinstance(record, dict):
            raise DecodeError("SCHEMA_MISMATCH", "registry: expected a JSON object")
        for key_id, info in record.items():
            if not isinstance(info, dict) or "public_key_hex" not in info:
                raise DecodeError("SCHEMA_MISMATCH", f"registry[{key_id}]: missing public_key_hex")
            try:
                public = bytes.fromhex(info["public_key_hex"])
            except (TypeError, ValueError):
                raise DecodeError(
                    "SCHEMA_MISMATCH", f"registry[{key_id}]: public_key_hex is not hex"
                ) from None
            if key_id_for_public(public) != key_id:
                raise DecodeError(
                    "SCHEMA_MISMATCH", f"registry[{key_id}]: key id does not match public key"
                )
            registry._entries[key_id] = (public, str(info.get("label", "")))
        return registry

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_record(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "KeyRegistry":
        return cls.from_record(json.loads(Path(path).read_text()))
