"""Binary tag protocol carried in DATA payloads.

Request:  ``op(1) | name_len(1) | name | value_len(2, BE) | value``
Response: ``0x81|0x82 | status(1) | value_len(2, BE) | value``
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

READ, WRITE = 0x01, 0x02
READ_RESP, WRITE_RESP = 0x81, 0x82

ST_OK = 0
ST_UNKNOWN_TAG = 1
ST_READ_ONLY = 2
ST_MALFORMED = 3
ST_OFFLINE = 4


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Request:
    op: int
    name: str
    value: bytes = b""


@dataclass(frozen=True)
class Response:
    op: int
    status: int
    value: bytes = b""


def encode_value(value) -> bytes:
    if value is None:
        return b""
    if isinstance(value, bytes):
        return value
    if isinstance(value, bool):
        return b"TRUE" if value else b"FALSE"
    if isinstance(value, float):
        return repr(value).encode("ascii")
    return str(value).encode("utf-8")


def decode_value(raw: bytes):
    """Inverse of :func:`encode_value` for ints, floats and text.

    Bytes that are not valid UTF-8 come back unchanged.
    """
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw
    try:
        return int(text)
    except ValueError:
        pass
    if text and text.strip() == text and not text.isalpha():
        try:
            return float(text)
        except ValueError:
            pass
    return text


def encode_request(op: int, name: str, value=None) -> bytes:
    if op not in (READ, WRITE):
        raise ProtocolError(f"bad op {op:#x}")
    nb = name.encode("utf-8")
    vb = encode_value(value) if op == WRITE else b""
    if len(nb) > 0xFF or len(vb) > 0xFFFF:
        raise ProtocolError("name or value too long")
    return bytes([op, len(nb)]) + nb + struct.pack(">H", len(vb)) + vb


def decode_request(payload: bytes) -> Request:
    if len(payload) < 4:
        raise ProtocolError("short request")
    op, nlen = payload[0], payload[1]
    if op not in (READ, WRITE):
        raise ProtocolError(f"bad op {op:#x}")
    if len(payload) < 2 + nlen + 2:
        raise ProtocolError("truncated name")
    try:
        name = payload[2:2 + nlen].decode("utf-8")
    except UnicodeDecodeError:
        raise ProtocolError("name is not UTF-8") from None
    (vlen,) = struct.unpack(">H", payload[2 + nlen:4 + nlen])
    value = payload[4 + nlen:]
    if len(value) != vlen:
        raise ProtocolError("value length mismatch")
    return Request(op, name, value)


def encode_response(op: int, status: int, value=None) -> bytes:
    vb = encode_value(value)
    return bytes([op, status]) + struct.pack(">H", len(vb)) + vb


def decode_response(payload: bytes) -> Response:
    if len(payload) < 4 or payload[0] not in (READ_RESP, WRITE_RESP):
        raise ProtocolError("not a response")
    (vlen,) = struct.unpack(">H", payload[2:4])
    value = payload[4:]
    if len(value) != vlen:
        raise ProtocolError("value length mismatch")
    return Response(payload[0], payload[1], value)


def decode_any(payload: bytes) -> Request | Response | None:
    """Best-effort decode used by passive observers; None for opaque data."""
    if not payload:
        return None
    try:
        if payload[0] in (READ, WRITE):
            return decode_request(payload)
        return decode_response(payload)
    except ProtocolError:
        return None
