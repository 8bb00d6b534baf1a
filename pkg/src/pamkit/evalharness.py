"""Security evaluation harness: attack battery, mutation trials, token
rejection suites, plus benchmark artifact generation and measurement.

The attack battery embeds each corpus pattern into a signed artifact
(episodic observations by default, the highest-volume free-text field),
runs the full re-hydration pipeline, and classifies the outcome:

- blocked:   the pattern was defanged by escaping before framing,
- escaped:   content-type enforcement quarantined the entry,
- executed:  a live (non-neutralized) finding reached the framed
             output - the failure case the suite exists to rule out.

Mutation trials apply seeded single-field mutations to copies of a
signed artifact and demand that verification reports at least one
failure every time, with zero false alarms on the unmutated original.
"""

from __future__ import annotations

import copy
import random
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path

from . import serialization
from .capability import (
    Permission,
    RevocationList,
    ScopeExpression,
    issue_token,
    validate_token,
)
from .errors import PamError
from .framing import scan_injection
from .keys import KeyPair, KeyRegistry, keypair_from_seed
from .model import (
    COMPONENTS,
    Components,
    MemoryArtifact,
    SourceAgent,
    artifact_from_record,
    entry_from_record,
    validate_envelope,
)
from .provenance import compute_entry_id, sign_artifact, verify_artifact
from .rehydrate import RehydrationConfig, TaskContext, rehydrate
from .timestamps import format_timestamp

_SECTION_HEADER_RE = re.compile(r"^\[([a-z][a-z0-9_]*)\]$")
_TARGET_RE = re.compile(r"^@([a-z]+)\.([a-z_]+)::")

_DEFAULT_CORPUS = "attack_corpus.txt"

MUTATION_KINDS = ("text_edit", "number_perturb", "timestamp_shift", "parent_rewire")


# ---------------------------------------------------------------------------
# Attack battery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttackCase:
    category: str
    pattern: str
    component: str = "episodic"
    field: str = "observation"


@dataclass(frozen=True)
class AttackOutcome:
    case: AttackCase
    outcome: str  # blocked | escaped | executed
    quarantine_reason: str | None = None


@dataclass(frozen=True)
class AttackReport:
    outcomes: tuple[AttackOutcome, ...]

    def rows(self) -> list[dict]:
        rows = []
        for category in sorted({o.case.category for o in self.outcomes}):
            per = [o for o in self.outcomes if o.case.category == category]
            rows.append({
                "category": category,
                "attempts": len(per),
                "blocked": sum(o.outcome == "blocked" for o in per),
                "escaped": sum(o.outcome == "escaped" for o in per),
                "executed": sum(o.outcome == "executed" for o in per),
            })
        return rows

    @property
    def executed_total(self) -> int:
        return sum(o.outcome == "executed" for o in self.outcomes)

    def to_record(self) -> dict:
        return {
            "report_version": "1",
            "kind": "attack-test",
            "rows": self.rows(),
            "total_attempts": len(self.outcomes),
            "executed_total": self.executed_total,
        }


def _decode_corpus_line(line: str) -> str:
    return line.encode("latin-1", "backslashreplace").decode("unicode_escape")


def load_attack_corpus(path: str | Path | None = None) -> list[AttackCase]:
    """Parse the sectioned corpus file into attack cases.

    Lines support python unicode escapes. An optional
    "@component.field::" prefix overrides the injection target field.
    """
    if path is None:
        text = (
            resources.files("pamkit").joinpath("patterns").joinpath(_DEFAULT_CORPUS)
            .read_text("utf-8")
        )
    else:
        text = Path(path).read_text("utf-8")
    cases: list[AttackCase] = []
    category = "uncategorized"
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        header = _SECTION_HEADER_RE.match(line)
        if header:
            category = header.group(1)
            continue
        component, target_field = "episodic", "observation"
        target = _TARGET_RE.match(line)
        if target:
            component, target_field = target.group(1), target.group(2)
            line = line[target.end():]
        cases.append(AttackCase(category, _decode_corpus_line(line), component, target_field))
    return cases


_HARNESS_SEED = b"pam-attack-harness-signing-key!!"


def build_poisoned_artifact(
    case: AttackCase, key: KeyPair, now: datetime
) -> tuple[MemoryArtifact, str]:
    """One-entry signed artifact with the attack pattern in the target
    field; returns (artifact, poisoned entry id)."""
    stamp = format_timestamp(now)
    if case.component == "episodic":
        fields = {
            "parent_ids": [], "created_at": stamp, "version": "1.0", "timestamp": stamp,
            "actor": "user:mallory", "observation": "benign placeholder", "salience": 0.95,
            "tags": ["attack"],
        }
    elif case.component == "semantic":
        fields = {
            "parent_ids": [], "created_at": stamp, "version": "1.0", "subject": "placeholder",
            "predicate": "relates_to", "object": "placeholder", "confidence": 0.9,
            "source_event_ids": [],
        }
    elif case.component == "identity":
        fields = {
            "parent_ids": [], "created_at": stamp, "version": "1.0",
            "attribute": "placeholder", "value": "placeholder", "category": "preference",
            "tags": [],
        }
    else:
        raise PamError("UNSUPPORTED_TARGET", f"no template for component {case.component!r}")
    if case.field not in fields or not isinstance(fields[case.field], str):
        raise PamError("UNSUPPORTED_TARGET", f"no text field {case.field!r} in {case.component}")
    fields[case.field] = case.pattern
    entry_id = compute_entry_id(fields)
    entry = entry_from_record(dict(fields, id=entry_id), case.component)
    artifact = MemoryArtifact(
        pam_version="1.0", schema_version="1.0", created_at=stamp,
        source_agent=SourceAgent("attack-harness", "none", "pamkit"),
        root_hash="", signature="", signing_key_id="",
        components=Components(**{case.component: (entry,)}),
    )
    return sign_artifact(artifact, key), entry_id


def run_attack_battery(
    cases: list[AttackCase], *, now: datetime | None = None, budget: int = 4096
) -> AttackReport:
    """Poison, sign, re-hydrate and classify every case."""
    if now is None:
        now = datetime(2025, 1, 16, tzinfo=timezone.utc)
    key = keypair_from_seed(_HARNESS_SEED)
    registry = KeyRegistry()
    registry.add(key.public_key, "attack-harness")
    token = issue_token(
        ScopeExpression(type="wildcard"), {Permission.READ}, "operator:harness",
        "agent:target", timedelta(days=1), key, now=now,
    )
    cfg = RehydrationConfig(token_budget=budget)
    ctx = TaskContext(text="", now=now)

    outcomes = []
    for case in cases:
        artifact, entry_id = build_poisoned_artifact(case, key, now)
        result = rehydrate(artifact, [token], "agent:target", ctx, cfg, registry)
        findings = scan_injection(result.framed_text)
        live = [f for f in findings if not f.neutralized]
        reason = next((why for eid, why in result.quarantined if eid == entry_id), None)
        if live:
            outcome = "executed"
        elif reason is not None:
            outcome = "escaped"
        else:
            # Anything not quarantined must carry escape markers (or a
            # neutralized finding) to count as blocked; the corpus is
            # all attacks, so "inert" would be a harness defect.
            defanged = "ESCAPED_" in result.framed_text or any(f.neutralized for f in findings)
            outcome = "blocked" if defanged else "executed"
        outcomes.append(AttackOutcome(case, outcome, reason))
    return AttackReport(tuple(outcomes))


# ---------------------------------------------------------------------------
# Mutation trials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MutationReport:
    trials: int
    detected: int
    by_kind: dict[str, tuple[int, int]] = field(default_factory=dict)  # kind -> (detected, run)

    @property
    def detection_rate(self) -> float:
        return self.detected / self.trials if self.trials else 1.0

    def to_record(self) -> dict:
        return {
            "report_version": "1",
            "kind": "mutate-test",
            "trials": self.trials,
            "detected": self.detected,
            "detection_rate": self.detection_rate,
            "by_kind": {
                kind: {"detected": d, "trials": t}
                for kind, (d, t) in sorted(self.by_kind.items())
            },
        }


_TEXT_FIELDS = (
    "observation", "actor", "subject", "predicate", "object", "name", "description",
    "goal", "scratch", "attribute", "value",
)


def _entry_slots(record: dict) -> list[tuple[str, int]]:
    return [
        (component, i)
        for component in COMPONENTS
        for i in range(len(record["components"][component]))
    ]


def _mutate_once(record: dict, rng: random.Random, kind: str) -> bool:
    """Apply one mutation of `kind` in place; True when something changed."""
    slots = _entry_slots(record)
    if not slots:
        return False
    for _ in range(32):
        component, index = slots[rng.randrange(len(slots))]
        entry = record["components"][component][index]
        if entry.get("redacted"):
            continue
        if kind == "text_edit":
            fields = [f for f in _TEXT_FIELDS if isinstance(entry.get(f), str)]
            if not fields:
                continue
            name = fields[rng.randrange(len(fields))]
            old = entry[name]
            choice = rng.randrange(3)
            if choice == 0 or not old:
                entry[name] = old + rng.choice("abcdexyz")
            elif choice == 1:
                pos = rng.randrange(len(old))
                entry[name] = old[:pos] + chr(97 + rng.randrange(26)) + old[pos + 1:]
            else:
                pos = rng.randrange(len(old))
                entry[name] = old[:pos] + old[pos + 1:]
            if entry[name] == old:
                entry[name] = old + "q"
            return True
        if kind == "number_perturb":
            fields = [
                f for f in ("salience", "confidence", "success_rate", "usage_count")
                if f in entry
            ]
            if not fields:
                continue
            name = fields[rng.randrange(len(fields))]
            if name == "usage_count":
                entry[name] = entry[name] + 1
            else:
                old = entry[name]
                new = round(rng.uniform(0.0, 1.0), 4)
                entry[name] = new if new != old else round(min(1.0, old / 2 + 0.251), 4)
            return True
        if kind == "timestamp_shift":
            fields = [f for f in ("created_at", "timestamp") if f in entry]
            name = fields[rng.randrange(len(fields))]
            from .timestamps import parse_timestamp

            shift = timedelta(seconds=rng.randrange(1, 3600) * rng.choice((-1, 1)))
            entry[name] = format_timestamp(parse_timestamp(entry[name]) + shift)
            return True
        if kind == "parent_rewire":
            all_ids = [
                e["id"]
                for c in COMPONENTS
                for e in record["components"][c]
            ]
            parents = entry.get("parent_ids", [])
            others = [x for x in all_ids if x != entry["id"] and x not in parents]
            if parents and len(parents) >= 2 and rng.random() < 0.3:
                entry["parent_ids"] = list(reversed(parents))
                return True
            if parents and others:
                pos = rng.randrange(len(parents))
                entry["parent_ids"] = parents[:pos] + [rng.choice(others)] + parents[pos + 1:]
                return True
            if others:
                entry["parent_ids"] = parents + [rng.choice(others)]
                return True
            continue
    return False


def run_mutation_trials(
    artifact: MemoryArtifact,
    registry: KeyRegistry,
    trials: int,
    seed: int,
    kind: str | None = None,
) -> MutationReport:
    """Seeded single-field mutations on independent copies; every trial
    must be detected by validation or verification."""
    if trials < 1:
        raise PamError("INVALID_TRIALS", f"trials must be >= 1, got {trials}")
    if kind is not None and kind not in MUTATION_KINDS:
        raise PamError("INVALID_KIND", f"unknown mutation kind {kind!r}")
    baseline = verify_artifact(artifact, registry)
    if not baseline.ok:
        raise PamError("SOURCE_UNVERIFIED", "artifact must verify before mutation trials")

    base_record = artifact.to_record()
    rng = random.Random(seed)
    detected = 0
    by_kind: dict[str, list[int]] = {k: [0, 0] for k in MUTATION_KINDS}
    for _ in range(trials):
        trial_kind = kind or MUTATION_KINDS[rng.randrange(len(MUTATION_KINDS))]
        mutated = copy.deepcopy(base_record)
        if not _mutate_once(mutated, rng, trial_kind):
            raise PamError("MUTATION_IMPOSSIBLE",
                           f"could not apply {trial_kind} to this artifact")
        by_kind[trial_kind][1] += 1
        caught = False
        try:
            candidate = artifact_from_record(mutated)
        except PamError:
            caught = True
        else:
            if not validate_envelope(candidate).ok:
                caught = True
            elif not verify_artifact(candidate, registry, fail_fast=True).ok:
                caught = True
        if caught:
            detected += 1
            by_kind[trial_kind][0] += 1
    return MutationReport(
        trials=trials,
        detected=detected,
        by_kind={k: (d, t) for k, (d, t) in by_kind.items() if t},
    )


# ---------------------------------------------------------------------------
# Token rejection suites
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenRejectionReport:
    results: dict[str, tuple[int, int]]  # suite -> (rejected, total)

    @property
    def all_rejected(self) -> bool:
        return all(rejected == total for rejected, total in self.results.values())

    def to_record(self) -> dict:
        return {
            "report_version": "1",
            "kind": "token-rejection",
            "suites": {
                suite: {"rejected": rejected, "total": total}
                for suite, (rejected, total) in sorted(self.results.items())
            },
            "all_rejected": self.all_rejected,
        }


def token_rejection_suite(
    *,
    now: datetime | None = None,
    expired: int = 100,
    wrong_audience: int = 100,
    invalid_signature: int = 100,
    revoked: int = 50,
    seed: int = 7,
) -> TokenRejectionReport:
    """Generated suites of bad tokens, all of which must be rejected."""
    if now is None:
        now = datetime(2025, 6, 1, tzinfo=timezone.utc)
    rng = random.Random(seed)
    key = keypair_from_seed(bytes(rng.randrange(256) for _ in range(32)))
    registry = KeyRegistry()
    registry.add(key.public_key, "suite")
    scope = ScopeExpression(type="component", components=("semantic",))
    perms = {Permission.READ}
    no_revocations = RevocationList()
    results: dict[str, tuple[int, int]] = {}

    count = 0
    for i in range(expired):
        token = issue_token(scope, perms, "operator:suite", f"agent:a{i}",
                            timedelta(minutes=1 + rng.randrange(60)), key,
                            now=now - timedelta(days=1))
        report = validate_token(token, f"agent:a{i}", now, no_revocations, registry)
        count += (not report.ok) and "EXPIRED" in report.codes()
    results["expired"] = (count, expired)

    count = 0
    for i in range(wrong_audience):
        token = issue_token(scope, perms, "operator:suite", f"agent:intended{i}",
                            timedelta(hours=1), key, now=now)
        report = validate_token(token, f"agent:imposter{i}", now, no_revocations, registry)
        count += (not report.ok) and "WRONG_AUDIENCE" in report.codes()
    results["wrong_audience"] = (count, wrong_audience)

    count = 0
    for i in range(invalid_signature):
        token = issue_token(scope, perms, "operator:suite", f"agent:a{i}",
                            timedelta(hours=1), key, now=now)
        sig = token.issuer_signature
        pos = len("ed25519:") + rng.randrange(128)
        old = sig[pos]
        new = "0" if old != "0" else "f"
        tampered = type(token)(**{**token.__dict__, "issuer_signature":
                                  sig[:pos] + new + sig[pos + 1:]})
        report = validate_token(tampered, f"agent:a{i}", now, no_revocations, registry)
        count += (not report.ok) and "INVALID_SIGNATURE" in report.codes()
    results["invalid_signature"] = (count, invalid_signature)

    count = 0
    for i in range(revoked):
        token = issue_token(scope, perms, "operator:suite", f"agent:a{i}",
                            timedelta(hours=1), key, now=now)
        revocations = RevocationList(revoked=frozenset({token.id}),
                                     updated_at=format_timestamp(now))
        report = validate_token(token, f"agent:a{i}", now, revocations, registry)
        count += (not report.ok) and "REVOKED" in report.codes()
    results["revoked"] = (count, revoked)

    return TokenRejectionReport(results)


# ---------------------------------------------------------------------------
# Benchmark artifact and measurements
# ---------------------------------------------------------------------------

_WORDS = (
    "quarterly revenue margin forecast pipeline contract supplier ledger audit invoice "
    "shipment inventory warehouse region market segment channel partner renewal churn "
    "retention onboarding rollout milestone backlog sprint release deployment incident "
    "latency throughput capacity utilization benchmark baseline variance outlook summary "
    "analysis review board charter budget headcount vendor procurement compliance policy "
    "framework protocol schema artifact component signature registry verification digest"
).split()

_COMPOSITION = (("episodic", 42), ("semantic", 35), ("procedural", 20),
                ("working", 25), ("identity", 5))


def _sentence(rng: random.Random, low: int = 8, high: int = 18) -> str:
    words = [rng.choice(_WORDS) for _ in range(rng.randrange(low, high))]
    return (" ".join(words)).capitalize()


def generate_benchmark_artifact(
    key: KeyPair, *, seed: int = 1234, base_time: datetime | None = None
) -> MemoryArtifact:
    """127-entry artifact (42/35/20/25/5) with realistic text lengths,
    derivation edges and tags; deterministic for a given seed."""
    rng = random.Random(seed)
    if base_time is None:
        base_time = datetime(2025, 1, 1, tzinfo=timezone.utc)
    tag_pool = ("finance", "q3", "ops", "research", "planning", "infra", "sales")

    def stamp(day_offset: float) -> str:
        return format_timestamp(base_time + timedelta(minutes=round(day_offset * 24 * 60)))

    components: dict[str, list] = {name: [] for name in COMPONENTS}
    episodic_ids: list[str] = []
    all_ids: list[str] = []

    def add(component: str, fields: dict) -> str:
        entry_id = compute_entry_id(fields)
        entry = entry_from_record(dict(fields, id=entry_id), component)
        components[component].append(entry)
        all_ids.append(entry_id)
        return entry_id

    for i in range(42):
        day = i * 0.7
        fields = {
            "parent_ids": [] if (i < 8 or rng.random() < 0.5)
            else [episodic_ids[rng.randrange(len(episodic_ids))]],
            "created_at": stamp(day), "version": "1.0", "timestamp": stamp(day),
            "actor": rng.choice(("user:alice", "user:bob", "agent:self", "tool:search")),
            "observation": _sentence(rng, 9, 22),
            "salience": round(rng.uniform(0.2, 0.99), 2),
            "tags": sorted(rng.sample(tag_pool, rng.randrange(1, 3))),
        }
        episodic_ids.append(add("episodic", fields))

    for i in range(35):
        source = episodic_ids[rng.randrange(len(episodic_ids))]
        fields = {
            "parent_ids": [source], "created_at": stamp(30 + i * 0.3), "version": "1.0",
            "subject": _sentence(rng, 2, 4), "predicate": rng.choice(
                ("reported", "acquired", "depends_on", "supplies", "owns", "measured")),
            "object": _sentence(rng, 3, 8),
            "confidence": round(rng.uniform(0.5, 0.99), 2),
            "source_event_ids": [source],
            "tags": sorted(rng.sample(tag_pool, rng.randrange(0, 2))),
        }
        add("semantic", fields)

    for i in range(20):
        fields = {
            "parent_ids": [episodic_ids[rng.randrange(len(episodic_ids))]]
            if rng.random() < 0.6 else [],
            "created_at": stamp(40 + i * 0.5), "version": "1.0",
            "name": f"procedure-{seed}-{i}",
            "description": _sentence(rng, 6, 14),
            "steps": [_sentence(rng, 3, 7) for _ in range(rng.randrange(2, 5))],
            "preconditions": [_sentence(rng, 3, 6) for _ in range(rng.randrange(0, 2))],
            "usage_count": rng.randrange(0, 40),
            "success_rate": round(rng.uniform(0.4, 1.0), 2),
            "tags": sorted(rng.sample(tag_pool, rng.randrange(0, 2))),
        }
        add("procedural", fields)

    for i in range(25):
        fields = {
            "parent_ids": [all_ids[rng.randrange(len(all_ids))]] if rng.random() < 0.5 else [],
            "created_at": stamp(55 + i * 0.2), "version": "1.0",
            "goal": _sentence(rng, 5, 10),
            "subgoals": [_sentence(rng, 3, 6) for _ in range(rng.randrange(0, 3))],
            "scratch": _sentence(rng, 4, 12) if rng.random() < 0.7 else "",
            "pending_actions": [_sentence(rng, 3, 6) for _ in range(rng.randrange(0, 3))],
            "status": rng.choice(("active", "blocked", "done")),
            "tags": [],
        }
        add("working", fields)

    for i in range(5):
        fields = {
            "parent_ids": [], "created_at": stamp(2 + i), "version": "1.0",
            "attribute": f"style-{i}", "value": _sentence(rng, 4, 9),
            "category": ("persona", "preference", "style", "policy", "preference")[i],
            "tags": [],
        }
        add("identity", fields)

    artifact = MemoryArtifact(
        pam_version="1.0", schema_version="1.0", created_at=stamp(60),
        source_agent=SourceAgent("bench-bot", "none", "pamkit"),
        root_hash="", signature="", signing_key_id="",
        components=Components(**{k: tuple(v) for k, v in components.items()}),
    )
    return sign_artifact(artifact, key)


def measure_format_efficiency(artifact: MemoryArtifact) -> dict:
    json_bytes = serialization.encode_artifact(artifact, serialization.WireFormat.JSON)
    cbor_bytes = serialization.encode_artifact(artifact, serialization.WireFormat.CBOR)
    return {
        "entries": artifact.components.entry_count(),
        "json_bytes": len(json_bytes),
        "cbor_bytes": len(cbor_bytes),
        "ratio": len(cbor_bytes) / len(json_bytes),
    }


def measure_pipeline_latency(
    artifact: MemoryArtifact,
    registry: KeyRegistry,
    key: KeyPair,
    *,
    runs: int = 100,
    budget: int = 8192,
) -> dict:
    """Median/mean/p95 full-pipeline wall time over `runs` executions."""
    now = datetime(2025, 3, 1, tzinfo=timezone.utc)
    token = issue_token(
        ScopeExpression(type="wildcard"), {Permission.READ}, "operator:bench",
        "agent:bench", timedelta(days=1), key, now=now,
    )
    ctx = TaskContext(text="", now=now)
    cfg = RehydrationConfig(token_budget=budget)
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        result = rehydrate(artifact, [token], "agent:bench", ctx, cfg, registry)
        samples.append(time.perf_counter() - start)
        if not result.ok:
            raise PamError("BENCH_FAILED", "pipeline failed during latency measurement")
    samples.sort()
    return {
        "runs": runs,
        "median_ms": samples[len(samples) // 2] * 1000,
        "mean_ms": sum(samples) / len(samples) * 1000,
        "p95_ms": samples[min(len(samples) - 1, int(len(samples) * 0.95))] * 1000,
    }
