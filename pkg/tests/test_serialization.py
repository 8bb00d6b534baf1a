"""Wire formats: determinism, round trips, sniffing, magic header."""

from __future__ import annotations

import json
import random

import pytest

from pamkit.errors import DecodeError
from pamkit.serialization import (
    EXTENSION_CBOR,
    EXTENSION_JSON,
    MAGIC_HEADER,
    MEDIA_TYPE_CBOR,
    MEDIA_TYPE_JSON,
    WireFormat,
    decode_artifact,
    encode_artifact,
    read_artifact,
    write_artifact,
)

import helpers


def test_format_constants():
    assert MAGIC_HEADER == bytes([0x50, 0x41, 0x4D, 0x01])
    assert WireFormat.JSON.media_type == MEDIA_TYPE_JSON == "application/pam+json"
    assert WireFormat.CBOR.media_type == MEDIA_TYPE_CBOR == "application/pam+cbor"
    assert WireFormat.JSON.extension == EXTENSION_JSON == ".pam"
    assert WireFormat.CBOR.extension == EXTENSION_CBOR == ".pam.cbor"


def test_json_starts_with_first_sorted_key(signed_sample):
    data = encode_artifact(signed_sample, WireFormat.JSON)
    assert data.startswith(b'{"capability_tokens":')


def test_cbor_magic_header(signed_sample):
    data = encode_artifact(signed_sample, WireFormat.CBOR)
    assert data[:4] == MAGIC_HEADER


def test_round_trips(signed_sample):
    json_bytes = encode_artifact(signed_sample, WireFormat.JSON)
    cbor_bytes = encode_artifact(signed_sample, WireFormat.CBOR)
    from_json, fmt_json = decode_artifact(json_bytes)
    from_cbor, fmt_cbor = decode_artifact(cbor_bytes)
    assert fmt_json is WireFormat.JSON and fmt_cbor is WireFormat.CBOR
    assert from_json == signed_sample
    assert from_cbor == signed_sample
    assert from_json == from_cbor  # cross-format agreement


def test_encoding_deterministic(signed_sample):
    for fmt in WireFormat:
        assert encode_artifact(signed_sample, fmt) == encode_artifact(signed_sample, fmt)


def test_key_order_independence(signed_sample):
    record = signed_sample.to_record()
    scrambled = json.dumps(record, sort_keys=False).encode()
    reversed_keys = json.dumps(
        {k: record[k] for k in reversed(list(record))}
    ).encode()
    a, _ = decode_artifact(scrambled)
    b, _ = decode_artifact(reversed_keys)
    assert encode_artifact(a) == encode_artifact(b) == encode_artifact(signed_sample)


def test_unknown_magic_version():
    with pytest.raises(DecodeError) as exc:
        decode_artifact(bytes([0x50, 0x41, 0x4D, 0x02]) + b"rest")
    assert exc.value.code == "UNKNOWN_FORMAT"


def test_empty_input():
    with pytest.raises(DecodeError) as exc:
        decode_artifact(b"")
    assert exc.value.code == "UNKNOWN_FORMAT"


def test_truncated_cbor_body(signed_sample):
    data = encode_artifact(signed_sample, WireFormat.CBOR)
    with pytest.raises(DecodeError) as exc:
        decode_artifact(data[: len(data) // 2])
    assert exc.value.code == "MALFORMED_CBOR"


def test_malformed_json():
    with pytest.raises(DecodeError) as exc:
        decode_artifact(b'{"pam_version": ')
    assert exc.value.code == "MALFORMED_JSON"


def test_schema_mismatch_carries_path(signed_sample):
    record = signed_sample.to_record()
    record["components"]["episodic"][0]["salience"] = "high"
    with pytest.raises(DecodeError) as exc:
        decode_artifact(json.dumps(record).encode())
    assert exc.value.code == "SCHEMA_MISMATCH"
    assert "episodic[0]" in str(exc.value)


def test_file_io_extension_detection(tmp_path, signed_sample):
    json_path = tmp_path / "artifact.pam"
    cbor_path = tmp_path / "artifact.pam.cbor"
    assert write_artifact(signed_sample, json_path) is WireFormat.JSON
    assert write_artifact(signed_sample, cbor_path) is WireFormat.CBOR
    assert cbor_path.read_bytes()[:4] == MAGIC_HEADER
    loaded_json, _ = read_artifact(json_path)
    loaded_cbor, _ = read_artifact(cbor_path)
    assert loaded_json == loaded_cbor == signed_sample


def test_embedded_tokens_round_trip(op_key):
    from datetime import timedelta

    from pamkit.capability import Permission, ScopeExpression, issue_token

    token = issue_token(
        ScopeExpression(type="tag_predicate", any_of=("finance",), none_of=("secret",)),
        {Permission.READ, Permission.REHYDRATE}, "operator:admin", "agent:partner",
        timedelta(days=7), op_key, now=helpers.BASE,
    )
    artifact = helpers.sample_artifact(key=op_key, tokens=(token,))
    for fmt in WireFormat:
        loaded, _ = decode_artifact(encode_artifact(artifact, fmt))
        assert loaded == artifact
        assert loaded.capability_tokens[0].scope_expression.any_of == ("finance",)


def test_fuzzed_round_trips():
    rng = random.Random(77)
    for _ in range(300):
        artifact = helpers.fake_artifact(rng)
        json_bytes = encode_artifact(artifact, WireFormat.JSON)
        cbor_bytes = encode_artifact(artifact, WireFormat.CBOR)
        a, _ = decode_artifact(json_bytes)
        b, _ = decode_artifact(cbor_bytes)
        assert a == artifact and b == artifact
        assert encode_artifact(a, WireFormat.JSON) == json_bytes
        assert encode_artifact(b, WireFormat.CBOR) == cbor_bytes
