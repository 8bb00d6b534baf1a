"""Deterministic CBOR codec."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pamkit import cbor
from pamkit.canonical import canonical_bytes
from pamkit.errors import CanonicalizationError, DecodeError


@pytest.mark.parametrize(
    "value,expected_hex",
    [
        (0, "00"), (1, "01"), (10, "0a"), (23, "17"), (24, "1818"), (100, "1864"),
        (1000, "1903e8"), (1000000, "1a000f4240"), (-1, "20"), (-10, "29"),
        (False, "f4"), (True, "f5"), (None, "f6"),
        (1.1, "fb3ff199999999999a"), (1.0e300, "fb7e37e43c8800759c"),
        ("", "60"), ("a", "6161"), ("IETF", "6449455446"),
        ("ü", "62c3bc"), ([], "80"), ([1, 2, 3], "83010203"),
        ({}, "a0"), ({"a": 1, "b": [2, 3]}, "a26161016162820203"),
    ],
)
def test_rfc_vectors(value, expected_hex):
    assert cbor.encode(value).hex() == expected_hex
    assert cbor.decode(bytes.fromhex(expected_hex)) == value


def test_map_keys_sorted_like_canonical_json():
    # Bytewise UTF-8 order == code point order, same as the JSON side.
    out = cbor.encode({"b": 0, "aa": 1})
    assert out.hex() == "a262616101616200"
    assert list(cbor.decode(out)) == ["aa", "b"]


def test_hash_reference_compaction_round_trip():
    ref = "blake3:" + "ab" * 32
    sig = "ed25519:" + "cd" * 64
    kid = "ed25519-pub:" + "0f" * 32
    for value, raw_len in ((ref, 33), (sig, 65), (kid, 33)):
        encoded = cbor.encode(value)
        assert encoded[0] >> 5 == 2  # byte string major type
        assert len(encoded) == 2 + raw_len
        assert cbor.decode(encoded) == value


def test_non_matching_reference_stays_text():
    for value in ("BLAKE3:" + "AB" * 32, "blake3:" + "ab" * 31, "blake3:zz" + "ab" * 31):
        encoded = cbor.encode(value)
        assert encoded[0] >> 5 == 3  # text major type
        assert cbor.decode(encoded) == value


def test_determinism():
    value = {"z": [1.5, "blake3:" + "11" * 32], "a": {"nested": True}}
    assert cbor.encode(value) == cbor.encode(value)


def test_truncation_rejected():
    data = cbor.encode({"a": [1, 2, 3], "b": "hello"})
    for cut in range(1, len(data)):
        with pytest.raises(DecodeError) as exc:
            cbor.decode(data[:cut])
        assert exc.value.code == "MALFORMED_CBOR"


def test_trailing_bytes_rejected():
    with pytest.raises(DecodeError):
        cbor.decode(cbor.encode([1]) + b"\x00")


def test_indefinite_and_tags_rejected():
    with pytest.raises(DecodeError):
        cbor.decode(bytes([0x9F, 0x01, 0xFF]))  # indefinite array
    with pytest.raises(DecodeError):
        cbor.decode(bytes([0xC0, 0x61, 0x61]))  # tag 0


def test_non_text_key_rejected():
    with pytest.raises(DecodeError):
        cbor.decode(bytes([0xA1, 0x01, 0x02]))  # {1: 2}


def test_non_finite_rejected():
    with pytest.raises(CanonicalizationError):
        cbor.encode(float("nan"))


def test_half_and_single_floats_decode():
    assert cbor.decode(bytes.fromhex("f93c00")) == 1.0
    assert cbor.decode(bytes.fromhex("fa47c35000")) == 100000.0


json_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-(2 ** 60), max_value=2 ** 60)
    | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=16),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=6), children, max_size=4),
    max_leaves=18,
)


@given(json_values)
def test_round_trip_preserves_canonical_bytes(value):
    decoded = cbor.decode(cbor.encode(value))
    assert canonical_bytes(decoded) == canonical_bytes(value)
