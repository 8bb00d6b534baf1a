"""Capability tokens: issuance, validation, scope resolution, authorization.

A token is a signed, scoped, time-bounded, audience-bound grant of a
permission set. Authorization is default-deny: with no valid matching
token, the authorized entry set is empty. Multiple tokens combine as a
union (each token independently grants); multiple tag operators inside
one scope combine conjunctively.

The `write` permission is parsed, stored and surfaced but gates no
operation: artifacts are immutable values, so mutation is always
derive-plus-re-sign.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable

from .canonical import canonical_bytes
from .errors import CapabilityError, DecodeError
from .keys import KeyPair, KeyRegistry, sign_message, verify_signature
from .timestamps import format_timestamp, is_valid_timestamp, now_utc, parse_timestamp
from .validation import ValidationReport, Violation

if TYPE_CHECKING:  # pragma: no cover
    from .model import MemoryArtifact

_COMPONENTS = ("episodic", "semantic", "procedural", "working", "identity")


class Permission(Enum):
    READ = "read"
    WRITE = "write"
    DERIVE = "derive"
    REDACT = "redact"
    EXPORT = "export"
    REHYDRATE = "rehydrate"


_PERMISSION_VALUES = {p.value for p in Permission}

SCOPE_TYPES = ("entry_list", "component", "tag_predicate", "wildcard")


@dataclass(frozen=True)
class ScopeExpression:
    """Rule selecting which entries a token governs.

    Exactly the fields of the declared type are meaningful:
    entry_list -> entry_ids; component -> components;
    tag_predicate -> any_of/all_of/none_of; wildcard -> nothing.
    """

    type: str
    entry_ids: tuple[str, ...] = ()
    components: tuple[str, ...] = ()
    any_of: tuple[str, ...] = ()
    all_of: tuple[str, ...] = ()
    none_of: tuple[str, ...] = ()

    def to_record(self) -> dict:
        record: dict[str, Any] = {"type": self.type}
        if self.type == "entry_list":
            record["entry_ids"] = list(self.entry_ids)
        elif self.type == "component":
            record["components"] = list(self.components)
        elif self.type == "tag_predicate":
            if self.any_of:
                record["any_of"] = list(self.any_of)
            if self.all_of:
                record["all_of"] = list(self.all_of)
            if self.none_of:
                record["none_of"] = list(self.none_of)
        return record


def validate_scope(scope: ScopeExpression) -> None:
    """Raise CapabilityError(INVALID_SCOPE) unless the scope is well-formed."""
    if scope.type not in SCOPE_TYPES:
        raise CapabilityError("INVALID_SCOPE", f"unknown scope type {scope.type!r}")
    populated = {
        "entry_ids": bool(scope.entry_ids),
        "components": bool(scope.components),
        "tags": bool(scope.any_of or scope.all_of or scope.none_of),
    }
    if scope.type == "entry_list":
        if not scope.entry_ids or populated["components"] or populated["tags"]:
            raise CapabilityError("INVALID_SCOPE", "entry_list scope takes entry_ids only")
    elif scope.type == "component":
        if not scope.components or populated["entry_ids"] or populated["tags"]:
            raise CapabilityError("INVALID_SCOPE", "component scope takes components only")
        for name in scope.components:
            if name not in _COMPONENTS:
                raise CapabilityError("INVALID_SCOPE", f"unknown component {name!r}")
    elif scope.type == "tag_predicate":
        if not populated["tags"] or populated["entry_ids"] or populated["components"]:
            raise CapabilityError(
                "INVALID_SCOPE", "tag_predicate scope needs at least one tag operator"
            )
    else:  # wildcard
        if any(populated.values()):
            raise CapabilityError("INVALID_SCOPE", "wildcard scope takes no selector fields")


def scope_from_record(record: Any, path: str = "scope_expression") -> ScopeExpression:
    if not isinstance(record, dict):
        raise DecodeError("SCHEMA_MISMATCH", f"{path}: expected an object")
    scope_type = record.get("type")
    if scope_type not in SCOPE_TYPES:
        raise DecodeError("SCHEMA_MISMATCH", f"{path}.type: unknown scope type {scope_type!r}")
    allowed = {
        "entry_list": {"type", "entry_ids"},
        "component": {"type", "components"},
        "tag_predicate": {"type", "any_of", "all_of", "none_of"},
        "wildcard": {"type"},
    }[scope_type]
    unknown = set(record) - allowed
    if unknown:
        raise DecodeError("SCHEMA_MISMATCH", f"{path}: unexpected fields {sorted(unknown)}")

    def str_tuple(name: str) -> tuple[str, ...]:
        value = record.get(name, [])
        if not isinstance(value, list) or any(not isinstance(x, str) for x in value):
            raise DecodeError("SCHEMA_MISMATCH", f"{path}.{name}: expected a list of strings")
        return tuple(value)

    scope = ScopeExpression(
        type=scope_type,
        entry_ids=str_tuple("entry_ids"),
        components=str_tuple("components"),
        any_of=str_tuple("any_of"),
        all_of=str_tuple("all_of"),
        none_of=str_tuple("none_of"),
    )
    try:
        validate_scope(scope)
    except CapabilityError as exc:
        raise DecodeError("SCHEMA_MISMATCH", f"{path}: {exc}") from None
    return scope


@dataclass(frozen=True)
class CapabilityToken:
    id: str
    scope_expression: ScopeExpression
    permissions: frozenset[Permission]
    issuer: str
    issuer_signature: str
    issuer_key_id: str
    audience: str
    issued_at: str
    expires_at: str

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "scope_expression": self.scope_expression.to_record(),
            "permissions": sorted(p.value for p in self.permissions),
            "issuer": self.issuer,
            "issuer_signature": self.issuer_signature,
            "issuer_key_id": self.issuer_key_id,
            "audience": self.audience,
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
        }

    def signing_payload(self) -> bytes:
        record = self.to_record()
        del record["issuer_signature"]
        return canonical_bytes(record)


_TOKEN_FIELDS = frozenset(
    {"id", "scope_expression", "permissions", "issuer", "issuer_signature", "issuer_key_id",
     "audience", "issued_at", "expires_at"}
)


def token_from_record(record: Any, path: str = "token") -> CapabilityToken:
    if not isinstance(record, dict):
        raise DecodeError("SCHEMA_MISMATCH", f"{path}: expected an object")
    if set(record) != _TOKEN_FIELDS:
        missing = _TOKEN_FIELDS - set(record)
        unknown = set(record) - _TOKEN_FIELDS
        detail = []
        if missing:
            detail.append(f"missing {sorted(missing)}")
        if unknown:
            detail.append(f"unknown {sorted(unknown)}")
        raise DecodeError("SCHEMA_MISMATCH", f"{path}: {', '.join(detail)}")
    for name in ("id", "issuer", "issuer_signature", "issuer_key_id", "audience", "issued_at",
                 "expires_at"):
        if not isinstance(record[name], str):
            raise DecodeError("SCHEMA_MISMATCH", f"{path}.{name}: expected string")
    permissions_record = record["permissions"]
    if not isinstance(permissions_record, list) or not permissions_record:
        raise DecodeError("SCHEMA_MISMATCH", f"{path}.permissions: expected a non-empty list")
    perms = set()
    for value in permissions_record:
        if value not in _PERMISSION_VALUES:
            raise DecodeError("SCHEMA_MISMATCH", f"{path}.permissions: unknown value {value!r}")
        perms.add(Permission(value))
    for name in ("issued_at", "expires_at"):
        if not is_valid_timestamp(record[name]):
            raise DecodeError("SCHEMA_MISMATCH", f"{path}.{name}: not an RFC 3339 UTC timestamp")
    if parse_timestamp(record["expires_at"]) <= parse_timestamp(record["issued_at"]):
        raise DecodeError("SCHEMA_MISMATCH", f"{path}: expires_at must be after issued_at")
    return CapabilityToken(
        id=record["id"],
        scope_expression=scope_from_record(record["scope_expression"],
                                           path=f"{path}.scope_expression"),
        permissions=frozenset(perms),
        issuer=record["issuer"],
        issuer_signature=record["issuer_signature"],
        issuer_key_id=record["issuer_key_id"],
        audience=record["audience"],
        issued_at=record["issued_at"],
        expires_at=record["expires_at"],
    )


@dataclass(frozen=True)
class RevocationList:
    revoked: frozenset[str] = frozenset()
    updated_at: str = ""

    def to_record(self) -> dict:
        return {"revoked": sorted(self.revoked), "updated_at": self.updated_at}

    @classmethod
    def from_record(cls, record: Any) -> "RevocationList":
        if not isinstance(record, dict) or not isinstance(record.get("revoked"), list):
            raise DecodeError("SCHEMA_MISMATCH", "revocations: expected {revoked: [...]}")
        return cls(
            revoked=frozenset(str(x) for x in record["revoked"]),
            updated_at=str(record.get("updated_at", "")),
        )


EMPTY_REVOCATIONS = RevocationList()


def issue_token(
    scope: ScopeExpression,
    permissions: Iterable[Permission],
    issuer: str,
    audience: str,
    ttl: timedelta,
    key: KeyPair,
    *,
    now: datetime | None = None,
) -> CapabilityToken:
    """Mint and sign a token valid from `now` for `ttl`."""
    perms = frozenset(permissions)
    if not perms:
        raise CapabilityError("EMPTY_PERMISSIONS", "a token must grant at least one permission")
    validate_scope(scope)
    if ttl <= timedelta(0):
        raise CapabilityError("INVALID_TTL", f"ttl must be positive, got {ttl}")
    if now is None:
        now = now_utc()
    token = CapabilityToken(
        id=f"cap:{uuid.uuid4()}",
        scope_expression=scope,
        permissions=perms,
        issuer=issuer,
        issuer_signature="",
        issuer_key_id=key.key_id,
        audience=audience,
        issued_at=format_timestamp(now),
        expires_at=format_timestamp(now + ttl),
    )
    signature = sign_message(key, token.signing_payload())
    return CapabilityToken(
        **{**token.__dict__, "issuer_signature": "ed25519:" + signature.hex()}
    )


def validate_token(
    token: CapabilityToken,
    presenter: str,
    now: datetime,
    revocations: RevocationList,
    registry: KeyRegistry,
) -> ValidationReport:
    """Check signature, expiry, audience binding and revocation.

    Every failed check is reported; ok only when all pass.
    """
    out: list[Violation] = []
    public = registry.lookup(token.issuer_key_id)
    if public is None:
        out.append(Violation("UNKNOWN_ISSUER_KEY", "issuer_key_id",
                             f"key {token.issuer_key_id!r} not in registry"))
    else:
        prefix, _, sig_hex = token.issuer_signature.partition(":")
        sig = b""
        if prefix == "ed25519":
            try:
                sig = bytes.fromhex(sig_hex)
            except ValueError:
                sig = b""
        if len(sig) != 64 or not verify_signature(public, token.signing_payload(), sig):
            out.append(Violation("INVALID_SIGNATURE", "issuer_signature",
                                 "signature does not verify under the issuer key"))
    if now >= parse_timestamp(token.expires_at):
        out.append(Violation("EXPIRED", "expires_at", f"token expired at {token.expires_at}"))
    if presenter != token.audience:
        out.append(Violation("WRONG_AUDIENCE", "audience",
                             f"presented by {presenter!r}, bound to {token.audience!r}"))
    if token.id in revocations.revoked:
        out.append(Violation("REVOKED", "id", f"token {token.id} is revoked"))
    return ValidationReport(ok=not out, violations=tuple(out))


def resolve_scope(scope: ScopeExpression, artifact: "MemoryArtifact") -> frozenset[str]:
    """The entry ids the scope selects within one artifact.

    Entries without tags (including redacted ones) have the empty tag
    set for tag predicates.
    """
    if scope.type == "wildcard":
        return frozenset(artifact.entry_ids())
    if scope.type == "entry_list":
        return frozenset(scope.entry_ids) & frozenset(artifact.entry_ids())
    if scope.type == "component":
        wanted = set(scope.components)
        return frozenset(
            entry.id
            for component, entry in artifact.components.all_entries()
            if component in wanted
        )
    # tag_predicate: all provided operators must hold conjointly.
    any_of = set(scope.any_of)
    all_of = set(scope.all_of)
    none_of = set(scope.none_of)
    selected = set()
    for _, entry in artifact.components.all_entries():
        tags = set(getattr(entry, "tags", ()))
        if any_of and not (tags & any_of):
            continue
        if all_of and not (all_of <= tags):
            continue
        if none_of and (tags & none_of):
            continue
        selected.add(entry.id)
    return frozenset(selected)


def authorize(
    artifact: "MemoryArtifact",
    tokens: Iterable[CapabilityToken],
    needed: Permission,
    presenter: str,
    now: datetime,
    revocations: RevocationList,
    registry: KeyRegistry,
) -> frozenset[str]:
    """Union of scopes over valid tokens granting `needed`; default-deny.

    Tokens embedded in the artifact are pooled with the presented ones;
    each still has to validate for the presenter on its own.
    """
    authorized: set[str] = set()
    pooled = list(tokens) + list(artifact.capability_tokens)
    for token in pooled:
        if needed not in token.permissions:
            continue
        if not validate_token(token, presenter, now, revocations, registry).ok:
            continue
        authorized |= resolve_scope(token.scope_expression, artifact)
    return frozenset(authorized)
