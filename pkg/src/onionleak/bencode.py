"""Canonical bencode.

Values map onto plain Python types: ``int`` (signed 64-bit), ``bytes``,
``list`` and ``dict`` with ``bytes`` keys. Decoding is strict: anything that
would not re-encode to the same octets is rejected with
:class:`~onionleak.errors.MalformedInput`.
"""

from __future__ import annotations

from typing import Union

from .errors import MalformedInput

BValue = Union[int, bytes, list, dict]

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1
MAX_DEPTH = 256

_DIGITS = frozenset(b"0123456789")


def encode(value: BValue) -> bytes:
    out: list[bytes] = []
    _encode(value, out)
    return b"".join(out)


def _encode(value, out):
    if isinstance(value, bool):
        raise TypeError("bool is not a bencode value")
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise ValueError(f"integer out of 64-bit range: {value}")
        out.append(b"i%de" % value)
    elif isinstance(value, (bytes, bytearray, memoryview)):
        value = bytes(value)
        out.append(b"%d:" % len(value))
        out.append(value)
    elif isinstance(value, (list, tuple)):
        out.append(b"l")
        for item in value:
            _encode(item, out)
        out.append(b"e")
    elif isinstance(value, dict):
        out.append(b"d")
        for key in sorted(value):
            if not isinstance(key, bytes):
                raise TypeError(f"dict keys must be bytes, got {type(key).__name__}")
            out.append(b"%d:" % len(key))
            out.append(key)
            _encode(value[key], out)
        out.append(b"e")
    else:
        raise TypeError(f"cannot bencode {type(value).__name__}")


def decode(data: bytes) -> BValue:
    """Decode exactly one value spanning all of ``data``."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise TypeError("decode expects bytes")
    data = bytes(data)
    if not data:
        raise MalformedInput("empty input")
    value, pos = _decode(data, 0, 0)
    if pos != len(data):
        raise MalformedInput(f"trailing data at offset {pos}")
    return value


def _decode(data: bytes, pos: int, depth: int):
    if depth > MAX_DEPTH:
        raise MalformedInput("nesting too deep")
    if pos >= len(data):
        raise MalformedInput("unexpected end of input")
    lead = data[pos]
    if lead == 0x69:  # i
        return _decode_int(data, pos)
    if lead in _DIGITS:
        return _decode_bytes(data, pos)
    if lead == 0x6C:  # l
        pos += 1
        items = []
        while True:
            if pos >= len(data):
                raise MalformedInput("unterminated list")
            if data[pos] == 0x65:
                return items, pos + 1
            item, pos = _decode(data, pos, depth + 1)
            items.append(item)
    if lead == 0x64:  # d
        pos += 1
        result = {}
        last = None
        while True:
            if pos >= len(data):
                raise MalformedInput("unterminated dict")
            if data[pos] == 0x65:
                return result, pos + 1
            if data[pos] not in _DIGITS:
                raise MalformedInput(f"dict key is not a string at offset {pos}")
            key, pos = _decode_bytes(data, pos)
            if last is not None and key <= last:
                kind = "duplicate" if key == last else "unsorted"
                raise MalformedInput(f"{kind} dict key {key!r}")
            last = key
            result[key], pos = _decode(data, pos, depth + 1)
    raise MalformedInput(f"bad prefix byte {lead:#04x} at offset {pos}")


def _decode_int(data: bytes, pos: int):
    end = data.find(b"e", pos + 1)
    if end < 0:
        raise MalformedInput("unterminated integer")
    body = data[pos + 1:end]
    digits = body[1:] if body[:1] == b"-" else body
    if not digits or not all(c in _DIGITS for c in digits):
        raise MalformedInput(f"bad integer {body!r}")
    if digits[0] == 0x30 and (len(digits) > 1 or body[:1] == b"-"):
        raise MalformedInput(f"non-canonical integer {body!r}")
    value = int(body)
    if not INT64_MIN <= value <= INT64_MAX:
        raise MalformedInput(f"integer out of 64-bit range {body!r}")
    return value, end + 1


def _decode_bytes(data: bytes, pos: int):
    colon = data.find(b":", pos)
    if colon < 0:
        raise MalformedInput("unterminated string length")
    prefix = data[pos:colon]
    if not prefix or not all(c in _DIGITS for c in prefix):
        raise MalformedInput(f"bad string length {prefix!r}")
    if prefix[0] == 0x30 and len(prefix) > 1:
        raise MalformedInput(f"non-canonical string length {prefix!r}")
    length = int(prefix)
    start = colon + 1
    if start + length > len(data):
        raise MalformedInput("string runs past end of input")
    return data[start:start + length], start + length
