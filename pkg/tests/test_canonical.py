"""Canonical JSON byte production."""

from __future__ import annotations

import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pamkit.canonical import canonical_bytes, format_number, parse_json
from pamkit.errors import CanonicalizationError


def test_key_ordering():
    assert canonical_bytes({"b": 1, "a": 2}) == b'{"a":2,"b":1}'


def test_code_point_key_order():
    # Code point order, not locale or length order.
    assert canonical_bytes({"b": 0, "aa": 0}) == b'{"aa":0,"b":0}'
    assert canonical_bytes({"é": 0, "z": 0}) == '{"z":0,"é":0}'.encode("utf-8")


def test_no_whitespace_and_minimal_escapes():
    out = canonical_bytes({"k": 'a"b\\c\nd\x01'})
    assert out == b'{"k":"a\\"b\\\\c\\nd\\u0001"}'


def test_salience_renders_without_trailing_zeros():
    assert canonical_bytes({"salience": 0.85}) == b'{"salience":0.85}'


def test_integers_without_fraction():
    assert canonical_bytes([0, 1, -7, 10 ** 20]) == b"[0,1,-7,100000000000000000000]"


@pytest.mark.parametrize(
    "value,expected",
    [
        (0.0, "0"), (-0.0, "0"), (1.0, "1"), (0.5, "0.5"), (-2.25, "-2.25"),
        (1e21, "1e+21"), (1e20, "100000000000000000000"),
        (1e-6, "0.000001"), (1e-7, "1e-7"), (0.0001, "0.0001"),
        (5e-324, "5e-324"), (1.7976931348623157e308, "1.7976931348623157e+308"),
        (123456.789, "123456.789"),
    ],
)
def test_number_formatting(value, expected):
    assert format_number(value) == expected


def test_non_finite_rejected():
    for bad in (float("nan"), float("inf"), float("-inf")):
        with pytest.raises(CanonicalizationError) as exc:
            canonical_bytes({"x": bad})
        assert exc.value.code == "NON_FINITE_NUMBER"


def test_non_string_key_rejected():
    with pytest.raises(CanonicalizationError) as exc:
        canonical_bytes({1: "x"})
    assert exc.value.code == "NON_STRING_KEY"


def test_unsupported_type_rejected():
    with pytest.raises(CanonicalizationError) as exc:
        canonical_bytes({"x": object()})
    assert exc.value.code == "UNSUPPORTED_TYPE"


json_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-(10 ** 15), max_value=10 ** 15)
    | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=20),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=8), children, max_size=4),
    max_leaves=20,
)


@given(json_values)
def test_fixpoint(value):
    first = canonical_bytes(value)
    assert canonical_bytes(parse_json(first)) == first


@given(json_values)
def test_output_is_json_parseable(value):
    parsed = parse_json(canonical_bytes(value))
    reference = json.loads(json.dumps(value))
    assert _num_eq(parsed, reference)


def _num_eq(a, b) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_num_eq(a[k], b[k]) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_num_eq(x, y) for x, y in zip(a, b))
    if isinstance(a, bool) or isinstance(b, bool):
        return a is b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return float(a) == float(b) or (math.isnan(float(a)) and math.isnan(float(b)))
    return a == b


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trips_through_text(value):
    rendered = format_number(value)
    assert float(rendered) == value or (value == 0.0 and float(rendered) == 0.0)
