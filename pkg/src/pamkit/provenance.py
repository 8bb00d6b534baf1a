"""Content addressing, Merkle-DAG verification, signing, disclosure, redaction.

An entry's id is the BLAKE3 hash of its canonical bytes with the id
field omitted, so the id commits to every field including the parent
links; any mutation anywhere in an ancestor chain is detectable.
Verification runs in three phases: per-entry hash consistency, DAG
integrity (acyclic, no dangling parents, a root exists), and the
Ed25519 signature over the root hash of the components record.

The signature covers the 32 raw digest bytes of the root hash, not its
hex text. Phase-1 hashing is batched through blake3.digest_many, which
runs lane-parallel when numpy is available.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime
from typing import Any, Iterable, Mapping

from . import blake3
from .canonical import canonical_bytes
from .errors import ProvenanceError
from .keys import KeyPair, KeyRegistry, sign_message, verify_signature
from .model import (
    DEFAULT_LIMITS,
    MemoryArtifact,
    RedactedEntry,
    REDACTION_TOKEN_RE,
    SizeLimits,
    Entry,
    entry_from_record,
    entry_to_record,
    validate_entry,
    validate_envelope,
)
from .timestamps import format_timestamp, now_utc

HASH_PREFIX = "blake3:"
SIGNATURE_PREFIX = "ed25519:"


@dataclass(frozen=True)
class ProvenanceDag:
    nodes: Mapping[str, Entry]
    children: Mapping[str, frozenset[str]]
    roots: frozenset[str]

    def depth_map(self) -> dict[str, int]:
        """Minimum parent-path distance from any root, per entry.

        Computed once per dag and cached (scoring asks per entry).
        """
        cached = self.__dict__.get("_depths")
        if cached is not None:
            return cached
        depths = {root: 0 for root in self.roots}
        frontier = list(self.roots)
        while frontier:
            next_frontier = []
            for node in frontier:
                for child in self.children.get(node, ()):
                    candidate = depths[node] + 1
                    if child not in depths or candidate < depths[child]:
                        depths[child] = candidate
                        next_frontier.append(child)
            frontier = next_frontier
        object.__setattr__(self, "_depths", depths)
        return depths


@dataclass(frozen=True)
class VerificationReport:
    phase1_ok: bool
    phase2_ok: bool
    phase3_ok: bool
    failures: tuple[tuple[int, str, str], ...]  # (phase, subject, code)
    verified_entry_count: int

    @property
    def ok(self) -> bool:
        return self.phase1_ok and self.phase2_ok and self.phase3_ok

    def to_record(self) -> dict:
        return {
            "ok": self.ok,
            "phase1_ok": self.phase1_ok,
            "phase2_ok": self.phase2_ok,
            "phase3_ok": self.phase3_ok,
            "verified_entry_count": self.verified_entry_count,
            "failures": [
                {"phase": phase, "subject": subject, "code": code}
                for phase, subject, code in self.failures
            ],
        }


def compute_entry_id(entry_fields: Mapping[str, Any]) -> str:
    """Hash-reference id for an entry record (id key ignored if present).

    The record is normalized the way entry_to_record serializes it:
    an empty tags field is omitted, so producers that never set tags
    hash the same bytes as ones that set it to [].
    """
    record = {
        k: v
        for k, v in entry_fields.items()
        if k != "id" and not (k == "tags" and not v)
    }
    return HASH_PREFIX + blake3.digest_hex(canonical_bytes(record))


def entry_id_for(entry: Entry) -> str:
    return compute_entry_id(entry_to_record(entry))


def compute_root_hash(components_record: Mapping[str, Any]) -> str:
    """BLAKE3 over the canonical bytes of the five-component record."""
    return HASH_PREFIX + blake3.digest_hex(canonical_bytes(components_record))


def build_dag(artifact: MemoryArtifact) -> ProvenanceDag:
    """Nodes, child map and roots; raises on dangling parents or cycles."""
    nodes: dict[str, Entry] = {}
    for _, entry in artifact.components.all_entries():
        nodes[entry.id] = entry
    children: dict[str, set[str]] = {entry_id: set() for entry_id in nodes}
    roots = set()
    for entry_id, entry in nodes.items():
        if not entry.parent_ids:
            roots.add(entry_id)
        for parent in entry.parent_ids:
            if parent not in nodes:
                raise ProvenanceError(
                    "DANGLING_PARENT", f"{entry_id} references missing parent {parent}"
                )
            children[parent].add(entry_id)

    # Kahn's algorithm; anything left unprocessed sits on a cycle.
    indegree = {entry_id: len(set(entry.parent_ids)) for entry_id, entry in nodes.items()}
    queue = [entry_id for entry_id, degree in indegree.items() if degree == 0]
    processed = 0
    while queue:
        node = queue.pop()
        processed += 1
        for child in children[node]:
            indegree[child] -= 1
            if indegree[child] == 0:
                queue.append(child)
    if processed != len(nodes):
        cyclic = sorted(entry_id for entry_id, degree in indegree.items() if degree > 0)
        raise ProvenanceError("CYCLE_DETECTED", f"cycle through entries: {', '.join(cyclic)}")

    return ProvenanceDag(
        nodes=nodes,
        children={k: frozenset(v) for k, v in children.items()},
        roots=frozenset(roots),
    )


def _expected_entry_id(entry: Entry) -> tuple[str, bytes | None]:
    """(declared id, canonical bytes to hash or None for redacted)."""
    if isinstance(entry, RedactedEntry):
        return entry.id, None
    record = entry_to_record(entry)
    del record["id"]
    return entry.id, canonical_bytes(record)


def verify_artifact(
    artifact: MemoryArtifact,
    registry: KeyRegistry,
    *,
    fail_fast: bool = False,
) -> VerificationReport:
    """Three-phase verification.

    Phase 1: recompute every entry id (redacted entries check the
    token-embedded hash instead). Phase 2: DAG integrity. Phase 3: root
    hash and Ed25519 signature against the registry. By default all
    phases run and every failure is recorded; fail_fast stops at the
    first failing phase for pipeline use.
    """
    failures: list[tuple[int, str, str]] = []

    entries = list(artifact.components.all_entries())
    to_hash: list[tuple[str, bytes]] = []
    for _, entry in entries:
        declared, payload = _expected_entry_id(entry)
        if payload is None:
            match = REDACTION_TOKEN_RE.match(entry.redaction_token)
            if not match:
                failures.append((1, entry.id, "REDACTION_TOKEN_FORMAT"))
            elif HASH_PREFIX + match.group(2) != entry.id:
                failures.append((1, entry.id, "REDACTION_TOKEN_MISMATCH"))
        else:
            to_hash.append((declared, payload))
    digests = blake3.digest_many([payload for _, payload in to_hash])
    for (declared, _), digest in zip(to_hash, digests):
        if declared != HASH_PREFIX + digest.hex():
            failures.append((1, declared, "ID_MISMATCH"))
    phase1_ok = not failures
    verified_count = len(entries) - len(failures)

    if fail_fast and not phase1_ok:
        return VerificationReport(False, False, False, tuple(failures), verified_count)

    phase2_failures: list[tuple[int, str, str]] = []
    try:
        dag = build_dag(artifact)
        if artifact.components.entry_count() > 0 and not dag.roots:
            phase2_failures.append((2, "dag", "NO_ROOT"))
    except ProvenanceError as exc:
        phase2_failures.append((2, "dag", exc.code))
    seen: set[str] = set()
    for _, entry in entries:
        if entry.id in seen:
            phase2_failures.append((2, entry.id, "DUPLICATE_ID"))
        seen.add(entry.id)
    failures.extend(phase2_failures)
    phase2_ok = not phase2_failures

    if fail_fast and not phase2_ok:
        return VerificationReport(phase1_ok, False, False, tuple(failures), verified_count)

    phase3_failures: list[tuple[int, str, str]] = []
    expected_root = compute_root_hash(artifact.components.to_record())
    if artifact.root_hash != expected_root:
        phase3_failures.append((3, "root_hash", "ROOT_MISMATCH"))
    public = registry.lookup(artifact.signing_key_id)
    if public is None:
        phase3_failures.append((3, "signing_key_id", "UNKNOWN_SIGNING_KEY"))
    else:
        signature = b""
        if artifact.signature.startswith(SIGNATURE_PREFIX):
            try:
                signature = bytes.fromhex(artifact.signature[len(SIGNATURE_PREFIX):])
            except ValueError:
                signature = b""
        digest = bytes.fromhex(expected_root[len(HASH_PREFIX):])
        if len(signature) != 64 or not verify_signature(public, digest, signature):
            phase3_failures.append((3, "signature", "INVALID_SIGNATURE"))
    failures.extend(phase3_failures)

    return VerificationReport(
        phase1_ok=phase1_ok,
        phase2_ok=phase2_ok,
        phase3_ok=not phase3_failures,
        failures=tuple(failures),
        verified_entry_count=verified_count,
    )


def sign_artifact(artifact: MemoryArtifact, key: KeyPair) -> MemoryArtifact:
    """Set root_hash and sign its raw digest bytes with the key."""
    root = compute_root_hash(artifact.components.to_record())
    digest = bytes.fromhex(root[len(HASH_PREFIX):])
    signature = sign_message(key, digest)
    return replace(
        artifact,
        root_hash=root,
        signature=SIGNATURE_PREFIX + signature.hex(),
        signing_key_id=key.key_id,
    )


def derive(
    artifact: MemoryArtifact,
    parent_ids: Iterable[str],
    component: str,
    fields: Mapping[str, Any],
    *,
    now: datetime | None = None,
    limits: SizeLimits = DEFAULT_LIMITS,
) -> tuple[MemoryArtifact, Entry]:
    """Append a new entry derived from existing parents.

    The returned artifact has root_hash/signature cleared; it must be
    re-signed before verification can pass.
    """
    parent_ids = tuple(parent_ids)
    known = artifact.entry_ids()
    for parent in parent_ids:
        if parent not in known:
            raise ProvenanceError("UNKNOWN_PARENT", f"parent {parent} not in artifact")
    if artifact.components.entry_count() + 1 > limits.max_entries:
        raise ProvenanceError(
            "WOULD_EXCEED_LIMITS", f"entry count would exceed {limits.max_entries}"
        )

    record = dict(fields)
    record["parent_ids"] = list(parent_ids)
    record["created_at"] = format_timestamp(now if now is not None else now_utc())
    record["version"] = artifact.pam_version
    record["id"] = compute_entry_id(record)
    try:
        entry = entry_from_record(record, component, path=component)
    except Exception as exc:
        raise ProvenanceError("INVALID_FIELDS", str(exc)) from None
    report = validate_entry(entry, component)
    if not report.ok:
        raise ProvenanceError("INVALID_FIELDS", "; ".join(report.codes()))
    if len(canonical_bytes(entry_to_record(entry))) > limits.max_entry_bytes:
        raise ProvenanceError(
            "WOULD_EXCEED_LIMITS", f"entry exceeds {limits.max_entry_bytes} canonical bytes"
        )

    updated = replace(
        artifact,
        components=artifact.components.with_entry(component, entry),
        root_hash="",
        signature="",
        signing_key_id="",
    )
    return updated, entry


def ancestor_closure(artifact: MemoryArtifact, entry_ids: Iterable[str]) -> frozenset[str]:
    """Requested ids plus all transitive ancestors."""
    entry_map = artifact.entry_map()
    closure: set[str] = set()
    frontier = list(entry_ids)
    while frontier:
        entry_id = frontier.pop()
        if entry_id in closure:
            continue
        if entry_id not in entry_map:
            raise ProvenanceError("UNKNOWN_ENTRY", f"entry {entry_id} not in artifact")
        closure.add(entry_id)
        frontier.extend(entry_map[entry_id][1].parent_ids)
    return frozenset(closure)


def selective_disclose(
    artifact: MemoryArtifact,
    entry_ids: Iterable[str],
    key: KeyPair,
    *,
    registry: KeyRegistry | None = None,
    now: datetime | None = None,
) -> MemoryArtifact:
    """Export the requested entries plus their ancestor closure as a
    fresh artifact signed by the discloser.

    When a registry is given the source must fully verify first;
    without one, hash and DAG integrity (phases 1-2) are still
    required. Embedded capability tokens are not carried over, and the
    source's root hash is recorded in disclosed_from.
    """
    if registry is not None:
        report = verify_artifact(artifact, registry)
        source_ok = report.ok
    else:
        report = verify_artifact(artifact, KeyRegistry())
        source_ok = report.phase1_ok and report.phase2_ok
    if not source_ok:
        raise ProvenanceError("SOURCE_UNVERIFIED", "source artifact does not verify")

    closure = ancestor_closure(artifact, entry_ids)
    kept = {
        name: tuple(entry for entry in entries if entry.id in closure)
        for name, entries in artifact.components.items()
    }
    disclosed = replace(
        artifact,
        created_at=format_timestamp(now if now is not None else now_utc()),
        capability_tokens=(),
        components=type(artifact.components)(**kept),
        disclosed_from=artifact.root_hash,
    )
    return sign_artifact(disclosed, key)


def redact_entry(
    artifact: MemoryArtifact,
    entry_id: str,
    key: KeyPair,
) -> MemoryArtifact:
    """Replace an entry's content with a typed redaction token.

    Id, parent links, creation time and component placement survive, so
    the DAG position is preserved and children still verify. The
    artifact is re-signed.
    """
    entry_map = artifact.entry_map()
    if entry_id not in entry_map:
        raise ProvenanceError("UNKNOWN_ENTRY", f"entry {entry_id} not in artifact")
    component, entry = entry_map[entry_id]
    if isinstance(entry, RedactedEntry):
        raise ProvenanceError("ALREADY_REDACTED", f"entry {entry_id} is already redacted")

    redacted = RedactedEntry(
        id=entry.id,
        parent_ids=entry.parent_ids,
        created_at=entry.created_at,
        version=entry.version,
        redaction_token=f"[PAM:REDACTED:{component}:{entry.id[len(HASH_PREFIX):]}]",
    )
    replaced = tuple(
        redacted if existing.id == entry_id else existing
        for existing in artifact.components.get(component)
    )
    updated = replace(
        artifact, components=replace(artifact.components, **{component: replaced})
    )
    return sign_artifact(updated, key)
