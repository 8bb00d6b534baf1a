"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import random
import struct
from datetime import datetime, timedelta, timezone

from pamkit.canonical import canonical_bytes
from pamkit.model import (
    COMPONENTS,
    Components,
    MemoryArtifact,
    SourceAgent,
    entry_from_record,
)
from pamkit.provenance import compute_entry_id, sign_artifact
from pamkit.timestamps import format_timestamp

BASE = datetime(2025, 1, 15, 8, 30, tzinfo=timezone.utc)


def stamp(minutes: int = 0) -> str:
    return format_timestamp(BASE + timedelta(minutes=minutes))


def episodic_fields(observation: str = "Requested Q3 financial summary", *,
                    minutes: int = 0, salience: float = 0.85,
                    actor: str = "user:alice", tags=("finance", "q3"),
                    parent_ids=()) -> dict:
    return {
        "parent_ids": list(parent_ids), "created_at": stamp(minutes), "version": "1.0",
        "timestamp": stamp(minutes), "actor": actor, "observation": observation,
        "salience": salience, "tags": list(tags),
    }


def semantic_fields(*, subject: str = "ACME Corp", predicate: str = "reported_revenue",
                    object: str = "$4.2B in Q3 2024", confidence: float = 0.92,
                    minutes: int = 1, parent_ids=(), source_event_ids=None) -> dict:
    sources = list(parent_ids) if source_event_ids is None else list(source_event_ids)
    return {
        "parent_ids": list(parent_ids), "created_at": stamp(minutes), "version": "1.0",
        "subject": subject, "predicate": predicate, "object": object,
        "confidence": confidence, "source_event_ids": sources,
    }


def build_entry(fields: dict, component: str):
    entry_id = compute_entry_id(fields)
    return entry_from_record(dict(fields, id=entry_id), component)


def build_artifact(components: Components, *, minutes: int = 90,
                   key=None, tokens=()) -> MemoryArtifact:
    artifact = MemoryArtifact(
        pam_version="1.0", schema_version="1.0", created_at=stamp(minutes),
        source_agent=SourceAgent("research-bot-alpha", "claude-3.5", "pam-sdk-v1.0"),
        root_hash="", signature="", signing_key_id="",
        capability_tokens=tuple(tokens), components=components,
    )
    if key is not None:
        artifact = sign_artifact(artifact, key)
    return artifact


def sample_pair():
    """The worked-example pair: one episodic root, one derived semantic."""
    epi_fields = episodic_fields()
    epi = build_entry(epi_fields, "episodic")
    sem = build_entry(semantic_fields(parent_ids=[epi.id]), "semantic")
    return epi, sem


def sample_artifact(key=None, tokens=()) -> MemoryArtifact:
    epi, sem = sample_pair()
    return build_artifact(Components(episodic=(epi,), semantic=(sem,)), key=key, tokens=tokens)


# ---------------------------------------------------------------------------
# Random artifact generators
# ---------------------------------------------------------------------------

_WORDS = ("ledger audit margin review supplier rollout capacity summary backlog outlook "
          "renewal channel contract region metric variance baseline partner forecast").split()


def _text(rng: random.Random, low=3, high=10) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(rng.randrange(low, high)))


def random_valid_artifact(rng: random.Random, *, key=None, max_entries: int = 12,
                          tagged: bool = True) -> MemoryArtifact:
    """Structurally valid artifact with real content addresses and a
    connected parent structure; signed when a key is given."""
    components: dict[str, list] = {name: [] for name in COMPONENTS}
    ids: list[str] = []
    count = rng.randrange(1, max_entries + 1)
    tag_pool = ("alpha", "beta", "gamma", "delta")
    for i in range(count):
        parents = []
        if ids and rng.random() < 0.6:
            parents = rng.sample(ids, min(len(ids), rng.randrange(1, 3)))
        kind = rng.choice(COMPONENTS)
        tags = sorted(rng.sample(tag_pool, rng.randrange(0, 3))) if tagged else []
        minute = i * 7 + rng.randrange(5)
        if kind == "episodic":
            fields = episodic_fields(_text(rng), minutes=minute,
                                     salience=round(rng.uniform(0, 1), 3),
                                     actor=f"user:u{rng.randrange(4)}",
                                     tags=tags, parent_ids=parents)
        elif kind == "semantic":
            fields = semantic_fields(subject=_text(rng, 1, 3), predicate="relates_to",
                                     object=_text(rng, 2, 6),
                                     confidence=round(rng.uniform(0, 1), 3),
                                     minutes=minute, parent_ids=parents)
            if tags:
                fields["tags"] = tags
        elif kind == "procedural":
            fields = {"parent_ids": parents, "created_at": stamp(minute), "version": "1.0",
                      "name": f"proc-{i}-{rng.randrange(10 ** 6)}", "description": _text(rng),
                      "steps": [_text(rng, 2, 5) for _ in range(rng.randrange(1, 4))],
                      "preconditions": [], "usage_count": rng.randrange(20),
                      "success_rate": round(rng.uniform(0, 1), 3), "tags": tags}
        elif kind == "working":
            fields = {"parent_ids": parents, "created_at": stamp(minute), "version": "1.0",
                      "goal": _text(rng), "subgoals": [], "scratch": _text(rng, 0, 4),
                      "pending_actions": [_text(rng, 2, 4)],
                      "status": rng.choice(("active", "blocked", "done")), "tags": tags}
        else:
            fields = {"parent_ids": parents, "created_at": stamp(minute), "version": "1.0",
                      "attribute": f"attr-{i}", "value": _text(rng),
                      "category": rng.choice(("persona", "preference", "style", "policy")),
                      "tags": tags}
        entry = build_entry(fields, kind)
        components[kind].append(entry)
        ids.append(entry.id)
    return build_artifact(
        Components(**{k: tuple(v) for k, v in components.items()}), key=key
    )


def fake_hash_ref(rng: random.Random) -> str:
    return "blake3:" + "".join(rng.choice("0123456789abcdef") for _ in range(64))


def fake_artifact(rng: random.Random, max_entries: int = 8) -> MemoryArtifact:
    """Shape-valid artifact with synthetic ids; fine for codec tests,
    never for verification."""
    components: dict[str, list] = {name: [] for name in COMPONENTS}
    ids: list[str] = []
    for i in range(rng.randrange(0, max_entries + 1)):
        parents = rng.sample(ids, min(len(ids), rng.randrange(0, 3))) if ids else []
        kind = rng.choice(COMPONENTS)
        entry_id = fake_hash_ref(rng)
        minute = i * 3
        if kind == "episodic":
            fields = dict(episodic_fields(_text(rng), minutes=minute,
                                          salience=round(rng.uniform(0, 1), 3),
                                          parent_ids=parents), id=entry_id)
        elif kind == "semantic":
            fields = dict(semantic_fields(subject=_text(rng, 1, 3), object=_text(rng, 2, 5),
                                          confidence=round(rng.uniform(0, 1), 3),
                                          minutes=minute, parent_ids=parents), id=entry_id)
        elif kind == "procedural":
            fields = {"id": entry_id, "parent_ids": parents, "created_at": stamp(minute),
                      "version": "1.0", "name": f"p{i}", "description": _text(rng),
                      "steps": [_text(rng, 2, 4)], "preconditions": [],
                      "usage_count": rng.randrange(9),
                      "success_rate": round(rng.uniform(0, 1), 3)}
        elif kind == "working":
            fields = {"id": entry_id, "parent_ids": parents, "created_at": stamp(minute),
                      "version": "1.0", "goal": _text(rng), "subgoals": [],
                      "scratch": "", "pending_actions": [], "status": "active"}
        else:
            fields = {"id": entry_id, "parent_ids": parents, "created_at": stamp(minute),
                      "version": "1.0", "attribute": f"a{i}", "value": _text(rng),
                      "category": "persona"}
        components[kind].append(entry_from_record(fields, kind))
        ids.append(entry_id)
    artifact = build_artifact(Components(**{k: tuple(v) for k, v in components.items()}))
    return artifact


# ---------------------------------------------------------------------------
# Independent single-chunk BLAKE3 oracle (reference-style, array based;
# deliberately a separate implementation from the package's unrolled one)
# ---------------------------------------------------------------------------

_IV = (0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A,
       0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19)
_PERM = (2, 6, 3, 10, 7, 0, 4, 13, 1, 11, 12, 5, 9, 14, 15, 8)


def _rot(x: int, n: int) -> int:
    return ((x >> n) | (x << (32 - n))) & 0xFFFFFFFF


def _g(state, a, b, c, d, mx, my):
    state[a] = (state[a] + state[b] + mx) & 0xFFFFFFFF
    state[d] = _rot(state[d] ^ state[a], 16)
    state[c] = (state[c] + state[d]) & 0xFFFFFFFF
    state[b] = _rot(state[b] ^ state[c], 12)
    state[a] = (state[a] + state[b] + my) & 0xFFFFFFFF
    state[d] = _rot(state[d] ^ state[a], 8)
    state[c] = (state[c] + state[d]) & 0xFFFFFFFF
    state[b] = _rot(state[b] ^ state[c], 7)


def _compress_ref(cv, block_words, counter, block_len, flags):
    state = list(cv) + [_IV[0], _IV[1], _IV[2], _IV[3],
                        counter & 0xFFFFFFFF, (counter >> 32) & 0xFFFFFFFF,
                        block_len, flags]
    m = list(block_words)
    for r in range(7):
        _g(state, 0, 4, 8, 12, m[0], m[1])
        _g(state, 1, 5, 9, 13, m[2], m[3])
        _g(state, 2, 6, 10, 14, m[4], m[5])
        _g(state, 3, 7, 11, 15, m[6], m[7])
        _g(state, 0, 5, 10, 15, m[8], m[9])
        _g(state, 1, 6, 11, 12, m[10], m[11])
        _g(state, 2, 7, 8, 13, m[12], m[13])
        _g(state, 3, 4, 9, 14, m[14], m[15])
        if r < 6:
            m = [m[_PERM[i]] for i in range(16)]
    return [state[i] ^ state[i + 8] for i in range(8)] + \
           [state[i + 8] ^ cv[i] for i in range(8)]


def blake3_single_chunk(data: bytes) -> str:
    """Reference-style BLAKE3 for inputs <= 1024 bytes (hex digest)."""
    assert len(data) <= 1024
    blocks = [data[i:i + 64] for i in range(0, len(data), 64)] or [b""]
    cv = list(_IV)
    for i, block in enumerate(blocks):
        padded = block + b"\x00" * (64 - len(block))
        words = struct.unpack("<16I", padded)
        flags = (1 if i == 0 else 0) | (2 if i == len(blocks) - 1 else 0)
        if i == len(blocks) - 1:
            flags |= 8  # root
            out = _compress_ref(cv, words, 0, len(block), flags)
            return b"".join(struct.pack("<I", w) for w in out[:8]).hex()
        cv = _compress_ref(cv, words, 0, len(block), flags)[:8]
    raise AssertionError("unreachable")


def oracle_entry_id(fields: dict) -> str:
    record = {k: v for k, v in fields.items() if k != "id"}
    return "blake3:" + blake3_single_chunk(canonical_bytes(record))


def ancestor_closure_oracle(artifact: MemoryArtifact, wanted) -> set[str]:
    """Brute-force reachability by repeated parent expansion."""
    entries = {entry.id: entry for _, entry in artifact.components.all_entries()}
    closure = set(wanted)
    changed = True
    while changed:
        changed = False
        for entry_id in list(closure):
            for parent in entries[entry_id].parent_ids:
                if parent not in closure:
                    closure.add(parent)
                    changed = True
    return closure
