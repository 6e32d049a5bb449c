import math

import pytest
from hypothesis import given, strategies as st

from recall_forge.engine import SerializationError, decode, encode

scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-(2 ** 63), max_value=2 ** 63 - 1),
    st.floats(allow_nan=False),
    st.text(),
    st.binary(),
)
values = st.recursive(scalars, lambda inner: st.tuples(inner, inner) | st.lists(inner, max_size=4),
                      max_leaves=12)


@given(values)
def test_round_trip(v):
    assert decode(encode(v)) == v


@given(st.integers(min_value=-(2 ** 63), max_value=2 ** 63 - 1),
       st.integers(min_value=-(2 ** 63), max_value=2 ** 63 - 1))
def test_int_order(a, b):
    assert (encode(a) < encode(b)) == (a < b)


@given(st.floats(allow_nan=False), st.floats(allow_nan=False))
def test_float_order(a, b):
    if a == b:
        return  # 0.0 and -0.0 compare equal but encode differently
    assert (encode(a) < encode(b)) == (a < b)


@given(st.text(), st.text())
def test_str_order(a, b):
    # code-point order equals utf-8 byte order
    assert (encode(a) < encode(b)) == (a < b)


@given(st.tuples(st.integers(-1000, 1000), st.text(max_size=3)),
       st.tuples(st.integers(-1000, 1000), st.text(max_size=3)))
def test_tuple_order(a, b):
    assert (encode(a) < encode(b)) == (a < b)


def test_prefix_sorts_first():
    assert encode("ab") < encode("ab\x00")
    assert encode((1,)) < encode((1, 2))
    assert encode(b"") < encode(b"\x00")


def test_negative_zero_and_infinities():
    assert encode(-math.inf) < encode(-1.0) < encode(0.0) < encode(math.inf)


@pytest.mark.parametrize("bad", [{1: 2}, {1, 2}, object(), 2 ** 64, float("nan")])
def test_unsupported(bad):
    with pytest.raises(SerializationError):
        encode(bad)


def test_trailing_garbage():
    with pytest.raises(SerializationError):
        decode(encode(1) + b"\x00")
