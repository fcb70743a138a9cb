"""Byte-exact canonical encoding used for every hashed or signed structure.

Fields are written in a fixed order: integers as signed big-endian 64-bit,
byte strings and text as a 4-byte big-endian length followed by the bytes,
sequences as a count followed by their items. Each value carries a one-byte
type tag so that no two distinct field lists share an encoding.
"""

from __future__ import annotations

import struct

_INT = b"i"
_BYTES = b"b"
_STR = b"s"
_SEQ = b"l"
_NONE = b"n"


def _enc(value, out: list[bytes]) -> None:
    if value is None:
        out.append(_NONE)
    elif isinstance(value, bool):
        out.append(_INT + struct.pack(">q", int(value)))
    elif isinstance(value, int):
        out.append(_INT + struct.pack(">q", value))
    elif isinstance(value, (bytes, bytearray)):
        out.append(_BYTES + struct.pack(">I", len(value)) + bytes(value))
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(_STR + struct.pack(">I", len(raw)) + raw)
    elif isinstance(value, (list, tuple)):
        out.append(_SEQ + struct.pack(">I", len(value)))
        for item in value:
            _enc(item, out)
    else:
        raise TypeError(f"cannot canonically encode {type(value).__name__}")


def encode(*fields) -> bytes:
    out: list[bytes] = []
    for f in fields:
        _enc(f, out)
    return b"".join(out)


class DecodeError(ValueError):
    pass


def _dec(data: bytes, pos: int):
    if pos >= len(data):
        raise DecodeError("truncated input")
    tag = data[pos:pos + 1]
    pos += 1
    try:
        if tag == _NONE:
            return None, pos
        if tag == _INT:
            (v,) = struct.unpack_from(">q", data, pos)
            return v, pos + 8
        if tag in (_BYTES, _STR):
            (n,) = struct.unpack_from(">I", data, pos)
            pos += 4
            raw = data[pos:pos + n]
            if len(raw) != n:
                raise DecodeError("truncated input")
            return (raw.decode("utf-8") if tag == _STR else bytes(raw)), pos + n
        if tag == _SEQ:
            (n,) = struct.unpack_from(">I", data, pos)
            pos += 4
            items = []
            for _ in range(n):
                item, pos = _dec(data, pos)
                items.append(item)
            return items, pos
    except struct.error as exc:
        raise DecodeError(str(exc)) from None
    raise DecodeError(f"unknown tag {tag!r}")


def decode(data: bytes) -> list:
    """Inverse of :func:`encode`; sequences come back as lists."""
    out, pos = [], 0
    while pos < len(data):
        value, pos = _dec(data, pos)
        out.append(value)
    return out
