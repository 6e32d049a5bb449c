"""Order-preserving binary encoding for engine keys and values.

Encoded byte strings compare (as plain ``bytes``) in the same order as the
decoded Python values compare, for values of the same shape. Tuples compare
component by component, so composite keys sort lexicographically. Values of
different types order by a fixed type tag.

Supported types: ``None``, ``bool``, ``int`` (signed 64-bit), ``float``,
``str``, ``bytes``, ``tuple`` and ``list`` (nested arbitrarily). NaN is
rejected.
"""

from __future__ import annotations

import struct

__all__ = ["SerializationError", "encode", "decode"]


class SerializationError(ValueError):
    """Raised when a value cannot be encoded or a byte string cannot be decoded."""


_END = 0x00
_NONE = 0x01
_FALSE = 0x02
_TRUE = 0x03
_INT = 0x04
_FLOAT = 0x05
_STR = 0x06
_BYTES = 0x07
_TUPLE = 0x08
_LIST = 0x09

_INT_OFFSET = 1 << 63
_SIGN = 1 << 63
_MASK64 = (1 << 64) - 1
_D = struct.Struct(">d")
_Q = struct.Struct(">Q")


def _escape(raw: bytes) -> bytes:
    # 0x00 0x01 terminates, so a shorter string sorts before its extensions.
    return raw.replace(b"\x00", b"\x00\xff") + b"\x00\x01"


def _encode_into(obj, out: bytearray) -> None:
    t = type(obj)
    if t is int:
        if not -_INT_OFFSET <= obj < _INT_OFFSET:
            raise SerializationError(f"integer out of 64-bit range: {obj}")
        out.append(_INT)
        out += _Q.pack(obj + _INT_OFFSET)
    elif t is tuple or t is list:
        out.append(_TUPLE if t is tuple else _LIST)
        for item in obj:
            _encode_into(item, out)
        out.append(_END)
    elif t is float:
        if obj != obj:
            raise SerializationError("NaN has no sort position")
        (u,) = _Q.unpack(_D.pack(obj))
        u = (u ^ _MASK64) if u & _SIGN else (u | _SIGN)
        out.append(_FLOAT)
        out += _Q.pack(u)
    elif t is str:
        out.append(_STR)
        out += _escape(obj.encode("utf-8"))
    elif obj is None:
        out.append(_NONE)
    elif t is bool:
        out.append(_TRUE if obj else _FALSE)
    elif t is bytes:
        out.append(_BYTES)
        out += _escape(obj)
    else:
        raise SerializationError(f"cannot encode value of type {t.__name__}: {obj!r}")


def encode(obj) -> bytes:
    """Encode ``obj`` into an order-preserving byte string."""
    out = bytearray()
    _encode_into(obj, out)
    return bytes(out)


def _read_escaped(buf: bytes, pos: int) -> tuple[bytes, int]:
    chunks = []
    while True:
        j = buf.index(b"\x00", pos)
        chunks.append(buf[pos:j])
        marker = buf[j + 1]
        if marker == 0x01:
            return b"".join(chunks), j + 2
        if marker != 0xFF:
            raise SerializationError(f"bad escape byte 0x{marker:02x} at offset {j + 1}")
        chunks.append(b"\x00")
        pos = j + 2


def _decode_at(buf: bytes, pos: int):
    tag = buf[pos]
    pos += 1
    if tag == _INT:
        return _Q.unpack_from(buf, pos)[0] - _INT_OFFSET, pos + 8
    if tag == _TUPLE or tag == _LIST:
        items = []
        while buf[pos] != _END:
            item, pos = _decode_at(buf, pos)
            items.append(item)
        return (tuple(items) if tag == _TUPLE else items), pos + 1
    if tag == _FLOAT:
        (u,) = _Q.unpack_from(buf, pos)
        u = (u ^ _SIGN) if u & _SIGN else (u ^ _MASK64)
        return _D.unpack(_Q.pack(u))[0], pos + 8
    if tag == _STR:
        raw, pos = _read_escaped(buf, pos)
        return raw.decode("utf-8"), pos
    if tag == _NONE:
        return None, pos
    if tag == _FALSE:
        return False, pos
    if tag == _TRUE:
        return True, pos
    if tag == _BYTES:
        return _read_escaped(buf, pos)
    raise SerializationError(f"unknown type tag 0x{tag:02x} at offset {pos - 1}")


def decode(buf: bytes):
    """Inverse of :func:`encode`."""
    try:
        obj, pos = _decode_at(buf, 0)
    except (IndexError, ValueError, struct.error) as exc:
        if isinstance(exc, SerializationError):
            raise
        raise SerializationError(f"truncated or malformed encoding: {exc}") from exc
    if pos != len(buf):
        raise SerializationError(f"{len(buf) - pos} trailing bytes after value")
    return obj
