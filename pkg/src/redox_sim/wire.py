"""Bit-exact little-endian framing for owner/requester messages.

Request::   u32 magic | u8 type (1 read, 2 read+prefetch) | u64 file_id | u64 requester | u64 budget
Response::  u32 magic | u8 type (3) | u16 P | ceil(P/8) map bytes (bit j = byte j//8, LSB first)
            | per set bit: u64 file_id | u64 length | payload
Error::     u32 magic | u8 type (4) | u32 code | u16 message length | utf-8 message
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

from .errors import WireFormatError

MAGIC = 0x52445851
READ, READ_PREFETCH, RESPONSE, ERROR = 1, 2, 3, 4

_REQ = struct.Struct("<IBQQQ")
_RESP_HEAD = struct.Struct("<IBH")
_PAYLOAD_HEAD = struct.Struct("<QQ")
_ERR_HEAD = struct.Struct("<IBIH")

REQUEST_SIZE = _REQ.size  # 29


def map_bytes(P: int) -> int:
    return (P + 7) // 8


def response_size(P: int, payload_sizes: Sequence[int]) -> int:
    """Encoded length of a response without materializing it."""
    return _RESP_HEAD.size + map_bytes(P) + sum(_PAYLOAD_HEAD.size + s for s in payload_sizes)


@dataclass(frozen=True)
class Payload:
    """Handle to one file's data. ``data`` is None in size-only simulation."""

    file_id: int
    size: int
    data: bytes | None = None


@dataclass(frozen=True)
class Request:
    type: int
    file_id: int
    requester: int
    remaining_budget: int


@dataclass(frozen=True)
class RemoteResponse:
    map: tuple[bool, ...]
    payloads: tuple[Payload, ...]

    def __post_init__(self):
        if sum(self.map) != len(self.payloads):
            raise WireFormatError(
                f"map has {sum(self.map)} set bits but {len(self.payloads)} payloads")

    @property
    def P(self) -> int:
        return len(self.map)

    @property
    def nbytes(self) -> int:
        return response_size(self.P, [p.size for p in self.payloads])


@dataclass(frozen=True)
class ErrorResponse:
    code: int
    message: str


def encode_request(req: Request) -> bytes:
    if req.type not in (READ, READ_PREFETCH):
        raise WireFormatError(f"bad request type {req.type}")
    return _REQ.pack(MAGIC, req.type, req.file_id, req.requester, req.remaining_budget)


def decode_request(buf: bytes) -> Request:
    if len(buf) != _REQ.size:
        raise WireFormatError(f"request must be {_REQ.size} bytes, got {len(buf)}")
    magic, typ, fid, req, budget = _REQ.unpack(buf)
    if magic != MAGIC or typ not in (READ, READ_PREFETCH):
        raise WireFormatError("bad request magic or type")
    return Request(typ, fid, req, budget)


def encode_response(resp: RemoteResponse) -> bytes:
    P = resp.P
    bits = bytearray(map_bytes(P))
    for j, bit in enumerate(resp.map):
        if bit:
            bits[j // 8] |= 1 << (j % 8)
    parts = [_RESP_HEAD.pack(MAGIC, RESPONSE, P), bytes(bits)]
    for p in resp.payloads:
        data = p.data if p.data is not None else bytes(p.size)
        if len(data) != p.size:
            raise WireFormatError(f"payload for file {p.file_id} has {len(data)} bytes, expected {p.size}")
        parts.append(_PAYLOAD_HEAD.pack(p.file_id, p.size))
        parts.append(data)
    return b"".join(parts)


def encode_error(err: ErrorResponse) -> bytes:
    msg = err.message.encode()
    return _ERR_HEAD.pack(MAGIC, ERROR, err.code, len(msg)) + msg


def decode_message(buf: bytes) -> RemoteResponse | ErrorResponse:
    if len(buf) < 5:
        raise WireFormatError("message truncated")
    magic, typ = struct.unpack_from("<IB", buf, 0)
    if magic != MAGIC:
        raise WireFormatError(f"bad magic {magic:#x}")
    if typ == ERROR:
        _, _, code, n = _ERR_HEAD.unpack_from(buf, 0)
        msg = buf[_ERR_HEAD.size:_ERR_HEAD.size + n]
        if len(msg) != n or len(buf) != _ERR_HEAD.size + n:
            raise WireFormatError("error message length mismatch")
        return ErrorResponse(code, msg.decode())
    if typ != RESPONSE:
        raise WireFormatError(f"unexpected message type {typ}")
    _, _, P = _RESP_HEAD.unpack_from(buf, 0)
    pos = _RESP_HEAD.size
    bits = buf[pos:pos + map_bytes(P)]
    if len(bits) != map_bytes(P):
        raise WireFormatError("map truncated")
    pos += map_bytes(P)
    mp = tuple(bool(bits[j // 8] >> (j % 8) & 1) for j in range(P))
    payloads = []
    for _ in range(sum(mp)):
        if pos + _PAYLOAD_HEAD.size > len(buf):
            raise WireFormatError("payload header truncated")
        fid, length = _PAYLOAD_HEAD.unpack_from(buf, pos)
        pos += _PAYLOAD_HEAD.size
        data = bytes(buf[pos:pos + length])
        if len(data) != length:
            raise WireFormatError("payload truncated")
        payloads.append(Payload(fid, length, data))
        pos += length
    if pos != len(buf):
        raise WireFormatError(f"{len(buf) - pos} trailing bytes")
    return RemoteResponse(mp, tuple(payloads))
