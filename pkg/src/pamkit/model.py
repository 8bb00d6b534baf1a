"""Memory model: entry variants, artifact envelope, structural validation.

Five entry kinds share a content-addressed base (id, parent links,
creation time, protocol version) and live in the envelope's five
component collections. Everything here is cryptography-free: parsing
enforces shape strictly (unknown fields are rejected, since silent
field-dropping would be a hash-confusion hazard), while validation
reports invariant violations with stable codes instead of raising.

All types are immutable values; share freely across threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterator

from .canonical import canonical_bytes
from .capability import CapabilityToken, token_from_record
from .errors import DecodeError
from .timestamps import is_valid_timestamp
from .validation import ValidationReport, Violation, report_from

PROTOCOL_VERSION = "1.0"

COMPONENTS = ("episodic", "semantic", "procedural", "working", "identity")

HASH_REF_RE = re.compile(r"^blake3:[0-9a-f]{64}$")
SIGNATURE_RE = re.compile(r"^ed25519:[0-9a-f]{128}$")
KEY_ID_RE = re.compile(r"^ed25519-pub:[0-9a-f]{64}$")
REDACTION_TOKEN_RE = re.compile(
    r"^\[PAM:REDACTED:(episodic|semantic|procedural|working|identity):([0-9a-f]{64})\]$"
)

WORKING_STATUSES = ("active", "blocked", "done")
IDENTITY_CATEGORIES = ("persona", "preference", "style", "policy")


@dataclass(frozen=True, kw_only=True)
class EntryBase:
    id: str
    parent_ids: tuple[str, ...]
    created_at: str
    version: str


@dataclass(frozen=True, kw_only=True)
class EpisodicEntry(EntryBase):
    timestamp: str
    actor: str
    observation: str
    salience: float
    tags: tuple[str, ...] = ()


@dataclass(frozen=True, kw_only=True)
class SemanticEntry(EntryBase):
    subject: str
    predicate: str
    object: str
    confidence: float
    source_event_ids: tuple[str, ...] = ()
    tags: tuple[str, ...] = ()


@dataclass(frozen=True, kw_only=True)
class ProceduralEntry(EntryBase):
    name: str
    description: str
    steps: tuple[str, ...] = ()
    preconditions: tuple[str, ...] = ()
    usage_count: int = 0
    success_rate: float = 0.0
    tags: tuple[str, ...] = ()


@dataclass(frozen=True, kw_only=True)
class WorkingEntry(EntryBase):
    goal: str
    subgoals: tuple[str, ...] = ()
    scratch: str = ""
    pending_actions: tuple[str, ...] = ()
    status: str = "active"
    tags: tuple[str, ...] = ()


@dataclass(frozen=True, kw_only=True)
class IdentityEntry(EntryBase):
    attribute: str
    value: str
    category: str
    tags: tuple[str, ...] = ()


@dataclass(frozen=True, kw_only=True)
class RedactedEntry(EntryBase):
    """Entry whose content was replaced by a typed redaction token.

    Keeps its DAG position: id, parent links and creation time are the
    originals, so children still verify. The token embeds the original
    id's hex, which is what hash verification checks instead of
    recomputing a content hash.
    """

    redaction_token: str


Entry = (
    EpisodicEntry | SemanticEntry | ProceduralEntry | WorkingEntry | IdentityEntry | RedactedEntry
)


@dataclass(frozen=True)
class SourceAgent:
    name: str
    model_family: str
    runtime: str

    def to_record(self) -> dict:
        return {"name": self.name, "model_family": self.model_family, "runtime": self.runtime}


@dataclass(frozen=True)
class Components:
    episodic: tuple[Entry, ...] = ()
    semantic: tuple[Entry, ...] = ()
    procedural: tuple[Entry, ...] = ()
    working: tuple[Entry, ...] = ()
    identity: tuple[Entry, ...] = ()

    def get(self, component: str) -> tuple[Entry, ...]:
        if component not in COMPONENTS:
            raise KeyError(component)
        return getattr(self, component)

    def items(self) -> Iterator[tuple[str, tuple[Entry, ...]]]:
        for name in COMPONENTS:
            yield name, getattr(self, name)

    def all_entries(self) -> Iterator[tuple[str, Entry]]:
        for name, entries in self.items():
            for entry in entries:
                yield name, entry

    def entry_count(self) -> int:
        return sum(len(entries) for _, entries in self.items())

    def with_entry(self, component: str, entry: Entry) -> "Components":
        return replace(self, **{component: self.get(component) + (entry,)})

    def to_record(self) -> dict:
        return {
            name: [entry_to_record(entry) for entry in entries] for name, entries in self.items()
        }


@dataclass(frozen=True, kw_only=True)
class MemoryArtifact:
    pam_version: str
    schema_version: str
    created_at: str
    source_agent: SourceAgent
    root_hash: str
    signature: str
    signing_key_id: str
    capability_tokens: tuple[CapabilityToken, ...] = ()
    components: Components = field(default_factory=Components)
    # Root hash of the artifact this one was selectively disclosed
    # from; an optional envelope extension for auditability.
    disclosed_from: str | None = None

    def entry_map(self) -> dict[str, tuple[str, Entry]]:
        return {entry.id: (name, entry) for name, entry in self.components.all_entries()}

    def entry_ids(self) -> set[str]:
        return {entry.id for _, entry in self.components.all_entries()}

    def to_record(self) -> dict:
        record = {
            "pam_version": self.pam_version,
            "schema_version": self.schema_version,
            "created_at": self.created_at,
            "source_agent": self.source_agent.to_record(),
            "root_hash": self.root_hash,
            "signature": self.signature,
            "signing_key_id": self.signing_key_id,
            "capability_tokens": [token.to_record() for token in self.capability_tokens],
            "components": self.components.to_record(),
        }
        if self.disclosed_from is not None:
            record["disclosed_from"] = self.disclosed_from
        return record


@dataclass(frozen=True)
class SizeLimits:
    max_entries: int = 100_000
    max_entry_bytes: int = 64 * 1024
    max_artifact_bytes: int = 100 * 1024 * 1024


DEFAULT_LIMITS = SizeLimits()


def new_artifact(
    source_name: str,
    model_family: str = "unspecified",
    runtime: str = "pamkit",
    *,
    created_at: str | None = None,
) -> MemoryArtifact:
    """Fresh unsigned artifact with empty components."""
    from .timestamps import format_timestamp, now_utc

    return MemoryArtifact(
        pam_version=PROTOCOL_VERSION,
        schema_version=PROTOCOL_VERSION,
        created_at=created_at if created_at is not None else format_timestamp(now_utc()),
        source_agent=SourceAgent(source_name, model_family, runtime),
        root_hash="",
        signature="",
        signing_key_id="",
    )


# ---------------------------------------------------------------------------
# Record parsing (strict shape enforcement)
# ---------------------------------------------------------------------------

_BASE_FIELDS = {"id": "str", "parent_ids": "str_list", "created_at": "str", "version": "str"}

_VARIANT_FIELDS: dict[str, tuple[type, dict[str, str], frozenset[str]]] = {
    "episodic": (
        EpisodicEntry,
        {"timestamp": "str", "actor": "str", "observation": "str", "salience": "num",
         "tags": "str_list"},
        frozenset({"tags"}),
    ),
    "semantic": (
        SemanticEntry,
        {"subject": "str", "predicate": "str", "object": "str", "confidence": "num",
         "source_event_ids": "str_list", "tags": "str_list"},
        frozenset({"tags"}),
    ),
    "procedural": (
        ProceduralEntry,
        {"name": "str", "description": "str", "steps": "str_list", "preconditions": "str_list",
         "usage_count": "int", "success_rate": "num", "tags": "str_list"},
        frozenset({"tags"}),
    ),
    "working": (
        WorkingEntry,
        {"goal": "str", "subgoals": "str_list", "scratch": "str", "pending_actions": "str_list",
         "status": "str", "tags": "str_list"},
        frozenset({"tags"}),
    ),
    "identity": (
        IdentityEntry,
        {"attribute": "str", "value": "str", "category": "str", "tags": "str_list"},
        frozenset({"tags"}),
    ),
}


def _schema_error(path: str, message: str) -> DecodeError:
    return DecodeError("SCHEMA_MISMATCH", f"{path}: {message}")


def _convert(value: Any, kind: str, path: str) -> Any:
    if kind == "str":
        if not isinstance(value, str):
            raise _schema_error(path, f"expected string, got {type(value).__name__}")
        return value
    if kind == "num":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _schema_error(path, f"expected number, got {type(value).__name__}")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise _schema_error(path, f"expected integer, got {type(value).__name__}")
        return value
    if kind == "str_list":
        if not isinstance(value, list) or any(not isinstance(item, str) for item in value):
            raise _schema_error(path, "expected a list of strings")
        return tuple(value)
    raise AssertionError(kind)


def entry_from_record(record: Any, component: str, path: str = "") -> Entry:
    """Parse one entry record; the component determines the variant.

    Unknown component names and unknown or missing fields are rejected
    outright rather than coerced.
    """
    if component not in _VARIANT_FIELDS:
        raise _schema_error(path or component, f"unknown component {component!r}")
    if not isinstance(record, dict):
        raise _schema_error(path, f"expected an object, got {type(record).__name__}")

    if record.get("redacted") is True:
        fields = dict(_BASE_FIELDS, redacted="bool", redaction_token="str")
        optional: frozenset[str] = frozenset()
        cls: type = RedactedEntry
    else:
        cls, variant_fields, optional = _VARIANT_FIELDS[component]
        fields = dict(_BASE_FIELDS, **variant_fields)

    unknown = set(record) - set(fields)
    if unknown:
        raise _schema_error(path, f"unknown fields {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, kind in fields.items():
        if name == "redacted":
            continue
        if name not in record:
            if name in optional:
                kwargs[name] = ()
                continue
            raise _schema_error(path, f"missing field {name!r}")
        kwargs[name] = _convert(record[name], kind, f"{path}.{name}" if path else name)
    return cls(**kwargs)


def entry_to_record(entry: Entry) -> dict:
    """Entry as a plain record; `tags` is omitted when empty so the
    canonical bytes of producers that never set tags are unchanged."""
    if isinstance(entry, RedactedEntry):
        return {
            "id": entry.id,
            "parent_ids": list(entry.parent_ids),
            "created_at": entry.created_at,
            "version": entry.version,
            "redacted": True,
            "redaction_token": entry.redaction_token,
        }
    record: dict[str, Any] = {
        "id": entry.id,
        "parent_ids": list(entry.parent_ids),
        "created_at": entry.created_at,
        "version": entry.version,
    }
    if isinstance(entry, EpisodicEntry):
        record.update(
            timestamp=entry.timestamp, actor=entry.actor, observation=entry.observation,
            salience=entry.salience,
        )
    elif isinstance(entry, SemanticEntry):
        record.update(
            subject=entry.subject, predicate=entry.predicate, object=entry.object,
            confidence=entry.confidence, source_event_ids=list(entry.source_event_ids),
        )
    elif isinstance(entry, ProceduralEntry):
        record.update(
            name=entry.name, description=entry.description, steps=list(entry.steps),
            preconditions=list(entry.preconditions), usage_count=entry.usage_count,
            success_rate=entry.success_rate,
        )
    elif isinstance(entry, WorkingEntry):
        record.update(
            goal=entry.goal, subgoals=list(entry.subgoals), scratch=entry.scratch,
            pending_actions=list(entry.pending_actions), status=entry.status,
        )
    elif isinstance(entry, IdentityEntry):
        record.update(attribute=entry.attribute, value=entry.value, category=entry.category)
    else:
        raise TypeError(f"not an entry: {type(entry).__name__}")
    if entry.tags:
        record["tags"] = list(entry.tags)
    return record


_ARTIFACT_FIELDS = frozenset(
    {"pam_version", "schema_version", "created_at", "source_agent", "root_hash", "signature",
     "signing_key_id", "capability_tokens", "components", "disclosed_from"}
)


def artifact_from_record(record: Any) -> MemoryArtifact:
    if not isinstance(record, dict):
        raise _schema_error("artifact", f"expected an object, got {type(record).__name__}")
    unknown = set(record) - _ARTIFACT_FIELDS
    if unknown:
        raise _schema_error("artifact", f"unknown fields {sorted(unknown)}")
    missing = _ARTIFACT_FIELDS - {"disclosed_from"} - set(record)
    if missing:
        raise _schema_error("artifact", f"missing fields {sorted(missing)}")

    for name in ("pam_version", "schema_version", "created_at", "root_hash", "signature",
                 "signing_key_id"):
        if not isinstance(record[name], str):
            raise _schema_error(name, "expected string")
    if "disclosed_from" in record and not isinstance(record["disclosed_from"], str):
        raise _schema_error("disclosed_from", "expected string")

    agent_record = record["source_agent"]
    if not isinstance(agent_record, dict) or set(agent_record) != {
        "name", "model_family", "runtime",
    }:
        raise _schema_error("source_agent", "expected {name, model_family, runtime}")
    for key, value in agent_record.items():
        if not isinstance(value, str):
            raise _schema_error(f"source_agent.{key}", "expected string")

    tokens_record = record["capability_tokens"]
    if not isinstance(tokens_record, list):
        raise _schema_error("capability_tokens", "expected a list")
    tokens = tuple(
        token_from_record(item, path=f"capability_tokens[{i}]")
        for i, item in enumerate(tokens_record)
    )

    components_record = record["components"]
    if not isinstance(components_record, dict):
        raise _schema_error("components", "expected an object")
    if set(components_record) != set(COMPONENTS):
        raise _schema_error(
            "components",
            f"expected exactly the keys {sorted(COMPONENTS)}, got {sorted(components_record)}",
        )
    parsed: dict[str, tuple[Entry, ...]] = {}
    for name in COMPONENTS:
        entries_record = components_record[name]
        if not isinstance(entries_record, list):
            raise _schema_error(f"components.{name}", "expected a list")
        parsed[name] = tuple(
            entry_from_record(item, name, path=f"components.{name}[{i}]")
            for i, item in enumerate(entries_record)
        )

    return MemoryArtifact(
        pam_version=record["pam_version"],
        schema_version=record["schema_version"],
        created_at=record["created_at"],
        source_agent=SourceAgent(**agent_record),
        root_hash=record["root_hash"],
        signature=record["signature"],
        signing_key_id=record["signing_key_id"],
        capability_tokens=tokens,
        components=Components(**parsed),
        disclosed_from=record.get("disclosed_from"),
    )


# ---------------------------------------------------------------------------
# Invariant validation (report-based)
# ---------------------------------------------------------------------------


def _check_base(entry: EntryBase, path: str, out: list[Violation]) -> None:
    if not HASH_REF_RE.match(entry.id):
        out.append(Violation("ID_FORMAT", f"{path}.id", f"malformed hash reference {entry.id!r}"))
    seen: set[str] = set()
    for i, parent in enumerate(entry.parent_ids):
        if not HASH_REF_RE.match(parent):
            out.append(
                Violation("PARENT_ID_FORMAT", f"{path}.parent_ids[{i}]",
                          f"malformed hash reference {parent!r}")
            )
        if parent == entry.id:
            out.append(
                Violation("SELF_PARENT", f"{path}.parent_ids[{i}]", "entry lists itself as parent")
            )
        if parent in seen:
            out.append(
                Violation("DUPLICATE_PARENT", f"{path}.parent_ids[{i}]",
                          f"duplicate parent {parent}")
            )
        seen.add(parent)
    if entry.version != PROTOCOL_VERSION:
        out.append(
            Violation("VERSION_UNSUPPORTED", f"{path}.version",
                      f"expected {PROTOCOL_VERSION!r}, got {entry.version!r}")
        )
    if not is_valid_timestamp(entry.created_at):
        out.append(
            Violation("TIMESTAMP_FORMAT", f"{path}.created_at",
                      f"not RFC 3339 UTC with Z suffix: {entry.created_at!r}")
        )


def validate_entry(entry: Entry, path: str = "entry") -> ValidationReport:
    """Check every invariant of the entry's variant; report-based."""
    out: list[Violation] = []
    _check_base(entry, path, out)

    if isinstance(entry, EpisodicEntry):
        if not is_valid_timestamp(entry.timestamp):
            out.append(Violation("TIMESTAMP_FORMAT", f"{path}.timestamp",
                                 f"not RFC 3339 UTC with Z suffix: {entry.timestamp!r}"))
        if not (0.0 <= entry.salience <= 1.0):
            out.append(Violation("SALIENCE_RANGE", f"{path}.salience",
                                 f"salience {entry.salience} outside [0, 1]"))
        if not entry.observation:
            out.append(Violation("OBSERVATION_EMPTY", f"{path}.observation",
                                 "observation must be non-empty"))
        for i, tag in enumerate(entry.tags):
            if tag != tag.lower():
                out.append(Violation("TAG_CASE", f"{path}.tags[{i}]",
                                     f"episodic tags must be lowercase: {tag!r}"))
    elif isinstance(entry, SemanticEntry):
        if not (0.0 <= entry.confidence <= 1.0):
            out.append(Violation("CONFIDENCE_RANGE", f"{path}.confidence",
                                 f"confidence {entry.confidence} outside [0, 1]"))
        for i, source in enumerate(entry.source_event_ids):
            if not HASH_REF_RE.match(source):
                out.append(Violation("SOURCE_EVENT_FORMAT", f"{path}.source_event_ids[{i}]",
                                     f"malformed hash reference {source!r}"))
            if source not in entry.parent_ids:
                out.append(Violation("SOURCE_EVENT_NOT_PARENT", f"{path}.source_event_ids[{i}]",
                                     f"source event {source} not in parent_ids"))
    elif isinstance(entry, ProceduralEntry):
        if not entry.name:
            out.append(Violation("NAME_EMPTY", f"{path}.name", "name must be non-empty"))
        if entry.usage_count < 0:
            out.append(Violation("USAGE_COUNT_RANGE", f"{path}.usage_count",
                                 f"usage_count {entry.usage_count} negative"))
        if not (0.0 <= entry.success_rate <= 1.0):
            out.append(Violation("SUCCESS_RATE_RANGE", f"{path}.success_rate",
                                 f"success_rate {entry.success_rate} outside [0, 1]"))
    elif isinstance(entry, WorkingEntry):
        if not entry.goal:
            out.append(Violation("GOAL_EMPTY", f"{path}.goal", "goal must be non-empty"))
        if entry.status not in WORKING_STATUSES:
            out.append(Violation("STATUS_INVALID", f"{path}.status",
                                 f"status {entry.status!r} not one of {WORKING_STATUSES}"))
    elif isinstance(entry, IdentityEntry):
        if entry.category not in IDENTITY_CATEGORIES:
            out.append(Violation("CATEGORY_INVALID", f"{path}.category",
                                 f"category {entry.category!r} not one of {IDENTITY_CATEGORIES}"))
    elif isinstance(entry, RedactedEntry):
        match = REDACTION_TOKEN_RE.match(entry.redaction_token)
        if not match:
            out.append(Violation("REDACTION_TOKEN_FORMAT", f"{path}.redaction_token",
                                 f"malformed redaction token {entry.redaction_token!r}"))
        elif entry.id != "blake3:" + match.group(2):
            out.append(Violation("REDACTION_TOKEN_MISMATCH", f"{path}.redaction_token",
                                 "embedded hash does not match entry id"))

    return report_from(out)


def validate_envelope(
    artifact: MemoryArtifact, limits: SizeLimits = DEFAULT_LIMITS
) -> ValidationReport:
    """Envelope invariants: versions, uniqueness, referential integrity
    and size limits. No cryptographic work; see provenance.verify_artifact
    for hashes and signatures."""
    out: list[Violation] = []

    if artifact.pam_version != PROTOCOL_VERSION:
        out.append(Violation("PAM_VERSION_UNSUPPORTED", "pam_version",
                             f"expected {PROTOCOL_VERSION!r}, got {artifact.pam_version!r}"))
    if artifact.schema_version != PROTOCOL_VERSION:
        out.append(Violation("SCHEMA_VERSION_UNSUPPORTED", "schema_version",
                             f"expected {PROTOCOL_VERSION!r}, got {artifact.schema_version!r}"))
    if not is_valid_timestamp(artifact.created_at):
        out.append(Violation("TIMESTAMP_FORMAT", "created_at",
                             f"not RFC 3339 UTC with Z suffix: {artifact.created_at!r}"))
    agent = artifact.source_agent
    for name, value in (("name", agent.name), ("model_family", agent.model_family),
                        ("runtime", agent.runtime)):
        if not value:
            out.append(Violation("SOURCE_AGENT_EMPTY", f"source_agent.{name}",
                                 "field must be non-empty"))

    # Empty strings mark an unsigned artifact; formats are only checked
    # when the fields are populated.
    if artifact.root_hash and not HASH_REF_RE.match(artifact.root_hash):
        out.append(Violation("ROOT_HASH_FORMAT", "root_hash",
                             f"malformed hash reference {artifact.root_hash!r}"))
    if artifact.signature and not SIGNATURE_RE.match(artifact.signature):
        out.append(Violation("SIGNATURE_FORMAT", "signature",
                             f"malformed signature {artifact.signature!r}"))
    if artifact.signing_key_id and not KEY_ID_RE.match(artifact.signing_key_id):
        out.append(Violation("KEY_ID_FORMAT", "signing_key_id",
                             f"malformed key id {artifact.signing_key_id!r}"))
    if artifact.disclosed_from is not None and not HASH_REF_RE.match(artifact.disclosed_from):
        out.append(Violation("DISCLOSED_FROM_FORMAT", "disclosed_from",
                             f"malformed hash reference {artifact.disclosed_from!r}"))

    all_ids: set[str] = set()
    entry_count = 0
    for component, entries in artifact.components.items():
        for i, entry in enumerate(entries):
            path = f"{component}[{i}]"
            entry_count += 1
            report = validate_entry(entry, path)
            out.extend(report.violations)
            if entry.id in all_ids:
                out.append(Violation("DUPLICATE_ID", f"{path}.id",
                                     f"entry id {entry.id} appears more than once"))
            all_ids.add(entry.id)
            if isinstance(entry, RedactedEntry):
                match = REDACTION_TOKEN_RE.match(entry.redaction_token)
                if match and match.group(1) != component:
                    out.append(Violation("REDACTION_COMPONENT_MISMATCH",
                                         f"{path}.redaction_token",
                                         f"token names {match.group(1)!r}, "
                                         f"entry lives in {component!r}"))

    for component, entries in artifact.components.items():
        for i, entry in enumerate(entries):
            for j, parent in enumerate(entry.parent_ids):
                if parent not in all_ids:
                    out.append(Violation("DANGLING_PARENT",
                                         f"{component}[{i}].parent_ids[{j}]",
                                         f"parent {parent} not present in artifact"))

    names = [e.name for e in artifact.components.procedural if isinstance(e, ProceduralEntry)]
    for name in sorted({n for n in names if names.count(n) > 1}):
        out.append(Violation("DUPLICATE_PROCEDURE_NAME", "procedural",
                             f"procedure name {name!r} is not unique"))
    pairs = [
        (e.attribute, e.category)
        for e in artifact.components.identity
        if isinstance(e, IdentityEntry)
    ]
    for pair in sorted({p for p in pairs if pairs.count(p) > 1}):
        out.append(Violation("DUPLICATE_IDENTITY_ATTRIBUTE", "identity",
                             f"(attribute, category) pair {pair!r} is not unique"))

    if entry_count > limits.max_entries:
        out.append(Violation("ENTRY_LIMIT", "components",
                             f"{entry_count} entries exceed limit {limits.max_entries}"))
    for component, entries in artifact.components.items():
        for i, entry in enumerate(entries):
            size = len(canonical_bytes(entry_to_record(entry)))
            if size > limits.max_entry_bytes:
                out.append(Violation("ENTRY_SIZE_LIMIT", f"{component}[{i}]",
                                     f"{size} bytes exceed limit {limits.max_entry_bytes}"))
    total = len(canonical_bytes(artifact.to_record()))
    if total > limits.max_artifact_bytes:
        out.append(Violation("ARTIFACT_SIZE_LIMIT", "artifact",
                             f"{total} bytes exceed limit {limits.max_artifact_bytes}"))

    return report_from(out)
