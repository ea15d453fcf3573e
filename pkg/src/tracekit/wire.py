"""Bit-exact message encodings.

Three messages cross process boundaries: the broadcast beacon token, the
TAN-authorized upload, and the published infection-indicating list.  All
integers are big-endian fixed width.  Decoders never raise anything but
:class:`DecodeError` on hostile input; fuzzing this property is part of the
test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .ids import TEMPID_BYTES, TempID

VERSION = 0x01
TOKEN_LEN = 1 + TEMPID_BYTES
TAN_DIGITS = 12
UPLOAD_ENTRY_LEN = 2 + TEMPID_BYTES
UPLOAD_HEADER_LEN = 1 + TAN_DIGITS + 2


class DecodeError(ValueError):
    """Input bytes do not form a valid message; frame is dropped."""


def encode_token(tempid: TempID) -> bytes:
    return bytes([VERSION]) + tempid.bytes


def decode_token(data: bytes) -> bytes:
    """Return the 16 identifier bytes carried by a beacon frame."""
    if len(data) != TOKEN_LEN:
        raise DecodeError(f"token length {len(data)}, expected {TOKEN_LEN}")
    if data[0] != VERSION:
        raise DecodeError(f"unknown token version {data[0]:#04x}")
    return data[1:]


@dataclass(frozen=True)
class UploadMessage:
    tan: str  # 12 ASCII digits
    entries: tuple  # of (day, id_bytes)


def encode_upload(tan: str, entries) -> bytes:
    if len(tan) != TAN_DIGITS or not tan.isascii() or not tan.isdigit():
        raise ValueError("TAN must be 12 ASCII digits")
    entries = list(entries)
    if len(entries) > 0xFFFF:
        raise ValueError("too many upload entries")
    out = bytearray([VERSION])
    out += tan.encode("ascii")
    out += struct.pack(">H", len(entries))
    for day, id_bytes in entries:
        if not 0 <= day <= 0xFFFF:
            raise ValueError(f"day out of range: {day}")
        if len(id_bytes) != TEMPID_BYTES:
            raise ValueError("upload entry id must be 16 bytes")
        out += struct.pack(">H", day)
        out += id_bytes
    return bytes(out)


def decode_upload(data: bytes) -> UploadMessage:
    if len(data) < UPLOAD_HEADER_LEN:
        raise DecodeError("upload message truncated")
    if data[0] != VERSION:
        raise DecodeError(f"unknown upload version {data[0]:#04x}")
    tan_raw = data[1 : 1 + TAN_DIGITS]
    if not all(0x30 <= b <= 0x39 for b in tan_raw):
        raise DecodeError("TAN field is not ASCII digits")
    (count,) = struct.unpack_from(">H", data, 1 + TAN_DIGITS)
    body = data[UPLOAD_HEADER_LEN:]
    if len(body) != count * UPLOAD_ENTRY_LEN:
        raise DecodeError(
            f"entry bytes {len(body)} do not match declared count {count}"
        )
    entries = []
    for i in range(count):
        off = i * UPLOAD_ENTRY_LEN
        (day,) = struct.unpack_from(">H", body, off)
        entries.append((day, bytes(body[off + 2 : off + UPLOAD_ENTRY_LEN])))
    return UploadMessage(tan=tan_raw.decode("ascii"), entries=tuple(entries))


@dataclass(frozen=True)
class NiidListMessage:
    day: int
    niids: tuple  # sorted, duplicate-free 16-byte values
    revoked: tuple  # sorted, duplicate-free 16-byte values


def _encode_id_section(values) -> bytes:
    out = struct.pack(">I", len(values))
    for v in values:
        if len(v) != TEMPID_BYTES:
            raise ValueError("identifier must be 16 bytes")
        out += v
    return out


def encode_niid_list(day: int, niids, revoked) -> bytes:
    """Encode the published list. Both sections are sorted and deduplicated
    here so the encoding is canonical regardless of caller ordering."""
    if not 0 <= day <= 0xFFFF:
        raise ValueError(f"day out of range: {day}")
    niids = sorted(set(niids))
    revoked = sorted(set(revoked))
    out = bytearray([VERSION])
    out += struct.pack(">H", day)
    out += _encode_id_section(niids)
    out += _encode_id_section(revoked)
    return bytes(out)


def _decode_id_section(data: bytes, off: int, what: str):
    if len(data) < off + 4:
        raise DecodeError(f"{what} count truncated")
    (count,) = struct.unpack_from(">I", data, off)
    off += 4
    end = off + count * TEMPID_BYTES
    if len(data) < end:
        raise DecodeError(f"{what} section truncated")
    values = [bytes(data[off + i * TEMPID_BYTES : off + (i + 1) * TEMPID_BYTES]) for i in range(count)]
    for a, b in zip(values, values[1:]):
        if not a < b:
            raise DecodeError(f"{what} section not strictly sorted")
    return values, end


def decode_niid_list(data: bytes) -> NiidListMessage:
    if len(data) < 3:
        raise DecodeError("list message truncated")
    if data[0] != VERSION:
        raise DecodeError(f"unknown list version {data[0]:#04x}")
    (day,) = struct.unpack_from(">H", data, 1)
    niids, off = _decode_id_section(data, 3, "NIID")
    revoked, off = _decode_id_section(data, off, "revocation")
    if off != len(data):
        raise DecodeError("trailing bytes after list message")
    return NiidListMessage(day=day, niids=tuple(niids), revoked=tuple(revoked))


# Length-prefixed record framing used for store snapshots.

def encode_records(records) -> bytes:
    """Frame a list of byte strings as u32-length-prefixed records."""
    out = bytearray()
    for rec in records:
        out += struct.pack(">I", len(rec))
        out += rec
    return bytes(out)


def decode_records(data: bytes):
    records = []
    off = 0
    while off < len(data):
        if len(data) < off + 4:
            raise DecodeError("record length truncated")
        (n,) = struct.unpack_from(">I", data, off)
        off += 4
        if len(data) < off + n:
            raise DecodeError("record body truncated")
        records.append(bytes(data[off : off + n]))
        off += n
    return records
