import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onionleak.bencode import INT64_MAX, INT64_MIN, decode, encode
from onionleak.errors import MalformedInput

import factories

ints = st.integers(min_value=INT64_MIN, max_value=INT64_MAX)
bvalues = st.recursive(
    ints | st.binary(max_size=64),
    lambda children: st.lists(children, max_size=6) | st.dictionaries(st.binary(max_size=12), children, max_size=6),
    max_leaves=40,
)


def test_golden_encodings():
    assert encode(42) == b"i42e"
    assert encode(b"spam") == b"4:spam"
    assert encode([1, 2]) == b"li1ei2ee"
    assert encode(0) == b"i0e"
    assert encode(-3) == b"i-3e"
    assert encode(b"") == b"0:"
    assert encode([]) == b"le"
    assert encode({}) == b"de"
    # keys come out in raw byte order whatever the insertion order
    assert encode({b"spam": b"eggs", b"cow": b"moo"}) == b"d3:cow3:moo4:spam4:eggse"
    assert encode({b"b": 1, b"a": 2, b"\xff": 3, b"A": 4}) == b"d1:Ai4e1:ai2e1:bi1e1:\xffi3ee"


def test_golden_decodings():
    assert decode(b"i0e") == 0
    assert decode(b"d3:cow3:moo4:spam4:eggse") == {b"cow": b"moo", b"spam": b"eggs"}
    assert decode(b"li1ei2ee") == [1, 2]
    assert decode(b"i-9223372036854775808e") == INT64_MIN
    assert decode(b"i9223372036854775807e") == INT64_MAX
    assert decode(b"l" * 10 + b"e" * 10) == [[[[[[[[[[]]]]]]]]]]


@pytest.mark.parametrize("data", [
    b"",
    b"i-0e",
    b"i03e",
    b"i-03e",
    b"ie",
    b"i-e",
    b"i12",
    b"i1.5e",
    b"i9223372036854775808e",
    b"-1:a",
    b"5:abc",
    b"03:abc",
    b"3abc",
    b"l",
    b"li1e",
    b"d",
    b"d3:cow",
    b"di1ei2ee",
    b"d1:bi1e1:ai2ee",
    b"d1:ai1e1:ai2ee",
    b"i1ei2e",
    b"4:spamX",
    b"x",
    b"e",
    b"l" * 300 + b"e" * 300,
])
def test_rejects_malformed(data):
    with pytest.raises(MalformedInput):
        decode(data)


def test_encode_refuses_non_values():
    with pytest.raises(TypeError):
        encode({"text-key": 1})
    with pytest.raises(TypeError):
        encode(1.5)
    with pytest.raises(TypeError):
        encode(True)
    with pytest.raises(ValueError):
        encode(INT64_MAX + 1)


def test_seeded_round_trip_10k():
    assert factories.round_trip_failures("bencode", 10_000, seed=11) == 0


@settings(max_examples=300, deadline=None)
@given(bvalues)
def test_round_trip(value):
    wire = encode(value)
    assert decode(wire) == value
    assert encode(decode(wire)) == wire


@settings(max_examples=500, deadline=None)
@given(st.binary(max_size=64))
def test_arbitrary_bytes_decode_canonically_or_fail(data):
    try:
        value = decode(data)
    except MalformedInput:
        return
    assert encode(value) == data


@settings(max_examples=300, deadline=None)
@given(bvalues, st.data())
def test_mutated_encodings_never_crash(value, data):
    wire = bytearray(encode(value))
    pos = data.draw(st.integers(0, len(wire) - 1))
    op = data.draw(st.sampled_from(["flip", "drop", "insert", "truncate"]))
    if op == "flip":
        wire[pos] ^= data.draw(st.integers(1, 255))
    elif op == "drop":
        del wire[pos]
    elif op == "insert":
        wire.insert(pos, data.draw(st.integers(0, 255)))
    else:
        del wire[pos:]
    try:
        back = decode(bytes(wire))
    except MalformedInput:
        return
    assert encode(back) == bytes(wire)
