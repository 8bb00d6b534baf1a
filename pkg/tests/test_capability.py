"""Capability tokens, scope resolution and authorization."""

from __future__ import annotations

import random
from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pamkit.capability import (
    EMPTY_REVOCATIONS,
    Permission,
    RevocationList,
    ScopeExpression,
    authorize,
    issue_token,
    resolve_scope,
    token_from_record,
    validate_token,
)
from pamkit.errors import CapabilityError, DecodeError
from pamkit.keys import KeyRegistry, keypair_from_seed
from pamkit.timestamps import format_timestamp

import helpers
from helpers import BASE

NOW = BASE
LATER = BASE + timedelta(hours=2)


@pytest.fixture(scope="module")
def issuer_key():
    return keypair_from_seed(b"\x33" * 32)


@pytest.fixture(scope="module")
def issuer_registry(issuer_key):
    registry = KeyRegistry()
    registry.add(issuer_key.public_key, "issuer")
    return registry


def issue(issuer_key, scope=None, perms=(Permission.READ,), audience="agent:research-bot-beta",
          ttl=timedelta(days=1), now=NOW):
    return issue_token(
        scope or ScopeExpression(type="wildcard"), set(perms), "operator:admin@example.com",
        audience, ttl, issuer_key, now=now,
    )


def test_issue_shape(issuer_key, issuer_registry):
    token = issue(
        issuer_key,
        scope=ScopeExpression(type="component", components=("episodic", "semantic")),
        perms=(Permission.READ, Permission.DERIVE),
    )
    record = token.to_record()
    assert record["id"].startswith("cap:")
    assert record["scope_expression"] == {
        "type": "component", "components": ["episodic", "semantic"],
    }
    assert record["permissions"] == ["derive", "read"]
    assert record["audience"] == "agent:research-bot-beta"
    assert record["expires_at"] > record["issued_at"]
    assert validate_token(token, "agent:research-bot-beta", NOW, EMPTY_REVOCATIONS,
                          issuer_registry).ok


def test_zero_ttl_rejected(issuer_key):
    with pytest.raises(CapabilityError) as exc:
        issue(issuer_key, ttl=timedelta(0))
    assert exc.value.code == "INVALID_TTL"


def test_empty_permissions_rejected(issuer_key):
    with pytest.raises(CapabilityError) as exc:
        issue(issuer_key, perms=())
    assert exc.value.code == "EMPTY_PERMISSIONS"


def test_wildcard_all_permissions_valid(issuer_key, issuer_registry):
    token = issue(issuer_key, perms=tuple(Permission))
    assert len(token.permissions) == 6
    assert validate_token(token, "agent:research-bot-beta", NOW, EMPTY_REVOCATIONS,
                          issuer_registry).ok


def test_invalid_scopes_rejected(issuer_key):
    bad_scopes = [
        ScopeExpression(type="entry_list"),  # needs entry_ids
        ScopeExpression(type="component"),  # needs components
        ScopeExpression(type="component", components=("mood",)),
        ScopeExpression(type="tag_predicate"),  # needs an operator
        ScopeExpression(type="wildcard", components=("semantic",)),
        ScopeExpression(type="everything"),
    ]
    for scope in bad_scopes:
        with pytest.raises(CapabilityError) as exc:
            issue(issuer_key, scope=scope)
        assert exc.value.code == "INVALID_SCOPE", scope


def test_token_record_round_trip(issuer_key):
    token = issue(issuer_key, scope=ScopeExpression(type="tag_predicate", any_of=("finance",)))
    assert token_from_record(token.to_record()) == token


def test_token_record_rejects_bad_lifetime(issuer_key):
    record = issue(issuer_key).to_record()
    record["expires_at"] = record["issued_at"]
    with pytest.raises(DecodeError):
        token_from_record(record)


def test_expired_token(issuer_key, issuer_registry):
    token = issue(issuer_key, ttl=timedelta(minutes=30))
    report = validate_token(token, "agent:research-bot-beta", LATER, EMPTY_REVOCATIONS,
                            issuer_registry)
    assert not report.ok and "EXPIRED" in report.codes()


def test_wrong_audience(issuer_key, issuer_registry):
    token = issue(issuer_key)
    report = validate_token(token, "agent:other", NOW, EMPTY_REVOCATIONS, issuer_registry)
    assert not report.ok and "WRONG_AUDIENCE" in report.codes()


def test_flipped_signature_byte(issuer_key, issuer_registry):
    token = issue(issuer_key)
    sig = token.issuer_signature
    flipped = sig[:-1] + ("0" if sig[-1] != "0" else "1")
    tampered = type(token)(**{**token.__dict__, "issuer_signature": flipped})
    report = validate_token(tampered, "agent:research-bot-beta", NOW, EMPTY_REVOCATIONS,
                            issuer_registry)
    assert not report.ok and "INVALID_SIGNATURE" in report.codes()


def test_payload_tamper_invalidates_signature(issuer_key, issuer_registry):
    token = issue(issuer_key)
    tampered = type(token)(**{**token.__dict__, "audience": "agent:research-bot-beta "})
    report = validate_token(tampered, "agent:research-bot-beta ", NOW, EMPTY_REVOCATIONS,
                            issuer_registry)
    assert "INVALID_SIGNATURE" in report.codes()


def test_revoked_token(issuer_key, issuer_registry):
    token = issue(issuer_key)
    revocations = RevocationList(revoked=frozenset({token.id}),
                                 updated_at=format_timestamp(NOW))
    report = validate_token(token, "agent:research-bot-beta", NOW, revocations,
                            issuer_registry)
    assert not report.ok and "REVOKED" in report.codes()


def test_unknown_issuer_key(issuer_key):
    token = issue(issuer_key)
    report = validate_token(token, "agent:research-bot-beta", NOW, EMPTY_REVOCATIONS,
                            KeyRegistry())
    assert not report.ok and "UNKNOWN_ISSUER_KEY" in report.codes()


def test_all_failures_reported(issuer_key):
    token = issue(issuer_key, ttl=timedelta(minutes=1))
    revocations = RevocationList(revoked=frozenset({token.id}), updated_at="")
    report = validate_token(token, "agent:imposter", LATER, revocations, KeyRegistry())
    assert set(report.codes()) == {"UNKNOWN_ISSUER_KEY", "EXPIRED", "WRONG_AUDIENCE", "REVOKED"}


# ---------------------------------------------------------------------------
# scope resolution
# ---------------------------------------------------------------------------


def test_component_scope(signed_sample):
    sem_id = signed_sample.components.semantic[0].id
    scope = ScopeExpression(type="component", components=("semantic",))
    assert resolve_scope(scope, signed_sample) == {sem_id}


def test_tag_predicate_any_of(signed_sample):
    epi_id = signed_sample.components.episodic[0].id
    scope = ScopeExpression(type="tag_predicate", any_of=("finance",))
    assert resolve_scope(scope, signed_sample) == {epi_id}


def test_wildcard_is_union_of_components(signed_sample):
    wildcard = resolve_scope(ScopeExpression(type="wildcard"), signed_sample)
    union = set()
    for name in ("episodic", "semantic", "procedural", "working", "identity"):
        union |= resolve_scope(
            ScopeExpression(type="component", components=(name,)), signed_sample
        )
    assert wildcard == union == signed_sample.entry_ids()


def test_entry_list_intersects_with_artifact(signed_sample):
    sem_id = signed_sample.components.semantic[0].id
    scope = ScopeExpression(type="entry_list",
                            entry_ids=(sem_id, "blake3:" + "00" * 32))
    assert resolve_scope(scope, signed_sample) == {sem_id}


def test_tag_operators_conjunctive(op_key):
    rng = random.Random(21)
    artifact = helpers.random_valid_artifact(rng, max_entries=12)
    scope = ScopeExpression(type="tag_predicate", any_of=("alpha", "beta"),
                            none_of=("gamma",))
    resolved = resolve_scope(scope, artifact)
    for _, entry in artifact.components.all_entries():
        tags = set(getattr(entry, "tags", ()))
        expected = bool(tags & {"alpha", "beta"}) and not (tags & {"gamma"})
        assert (entry.id in resolved) == expected


def test_none_of_partition(op_key):
    rng = random.Random(22)
    artifact = helpers.random_valid_artifact(rng, max_entries=12)
    has = resolve_scope(ScopeExpression(type="tag_predicate", any_of=("alpha",)), artifact)
    lacks = resolve_scope(ScopeExpression(type="tag_predicate", none_of=("alpha",)), artifact)
    assert has | lacks == artifact.entry_ids()
    assert has & lacks == set()


# ---------------------------------------------------------------------------
# authorize
# ---------------------------------------------------------------------------


def test_authorize_read_vs_export(signed_sample, issuer_key, issuer_registry):
    token = issue(issuer_key,
                  scope=ScopeExpression(type="component", components=("semantic",)),
                  perms=(Permission.READ, Permission.DERIVE))
    sem_id = signed_sample.components.semantic[0].id
    granted = authorize(signed_sample, [token], Permission.READ, "agent:research-bot-beta",
                        NOW, EMPTY_REVOCATIONS, issuer_registry)
    assert granted == {sem_id}
    denied = authorize(signed_sample, [token], Permission.EXPORT, "agent:research-bot-beta",
                       NOW, EMPTY_REVOCATIONS, issuer_registry)
    assert denied == frozenset()


def test_default_deny(signed_sample, issuer_registry):
    assert authorize(signed_sample, [], Permission.READ, "agent:any", NOW,
                     EMPTY_REVOCATIONS, issuer_registry) == frozenset()


def test_invalid_tokens_grant_nothing(signed_sample, issuer_key, issuer_registry):
    expired = issue(issuer_key, ttl=timedelta(minutes=1))
    assert authorize(signed_sample, [expired], Permission.READ, "agent:research-bot-beta",
                     LATER, EMPTY_REVOCATIONS, issuer_registry) == frozenset()


def test_embedded_tokens_pooled(op_key, issuer_key, issuer_registry):
    token = issue(issuer_key,
                  scope=ScopeExpression(type="component", components=("episodic",)))
    artifact = helpers.sample_artifact(key=op_key, tokens=(token,))
    granted = authorize(artifact, [], Permission.READ, "agent:research-bot-beta", NOW,
                        EMPTY_REVOCATIONS, issuer_registry)
    assert granted == {artifact.components.episodic[0].id}


@settings(max_examples=40)
@given(st.integers(min_value=0, max_value=10 ** 6), st.integers(min_value=1, max_value=3))
def test_authorize_monotone_in_tokens(seed, extra_tokens):
    rng = random.Random(seed)
    issuer = keypair_from_seed(b"\x33" * 32)
    registry = KeyRegistry()
    registry.add(issuer.public_key, "issuer")
    artifact = helpers.random_valid_artifact(rng, max_entries=10)
    pool = [
        issue(issuer, scope=ScopeExpression(type="component",
                                            components=(rng.choice(
                                                ("episodic", "semantic", "procedural",
                                                 "working", "identity")),)))
        for _ in range(extra_tokens)
    ]
    granted_prefixes = [
        authorize(artifact, pool[:i], Permission.READ, "agent:research-bot-beta", NOW,
                  EMPTY_REVOCATIONS, registry)
        for i in range(len(pool) + 1)
    ]
    for smaller, larger in zip(granted_prefixes, granted_prefixes[1:]):
        assert smaller <= larger


def test_scope_algebra(op_key):
    rng = random.Random(31)
    artifact = helpers.random_valid_artifact(rng, max_entries=12)
    wildcard = resolve_scope(ScopeExpression(type="wildcard"), artifact)
    for name in ("episodic", "semantic", "working"):
        component_ids = resolve_scope(
            ScopeExpression(type="component", components=(name,)), artifact
        )
        assert component_ids <= wildcard
        if component_ids:
            subset = set(rng.sample(sorted(component_ids),
                                    max(1, len(component_ids) // 2)))
            listed = resolve_scope(
                ScopeExpression(type="entry_list", entry_ids=tuple(subset)), artifact
            )
            assert listed <= component_ids


def test_rejection_suites_small():
    from pamkit.evalharness import token_rejection_suite

    report = token_rejection_suite(expired=10, wrong_audience=10, invalid_signature=10,
                                   revoked=5)
    assert report.all_rejected
    assert report.results == {"expired": (10, 10), "wrong_audience": (10, 10),
                              "invalid_signature": (10, 10), "revoked": (5, 5)}
