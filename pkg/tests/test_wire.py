import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracekit import wire
from tracekit.ids import TempID


def _tid(raw):
    return TempID(bytes=raw, epoch_index=0, day=0)


def test_token_layout():
    tok = wire.encode_token(_tid(b"\x00" * 16))
    assert tok == b"\x01" + b"\x00" * 16
    assert len(tok) == 17


def test_token_round_trip_random():
    rng = random.Random(3)
    for _ in range(10_000):
        raw = rng.randbytes(16)
        assert wire.decode_token(wire.encode_token(_tid(raw))) == raw


def test_token_decode_errors():
    with pytest.raises(wire.DecodeError):
        wire.decode_token(b"\x00" * 16)  # missing version byte
    with pytest.raises(wire.DecodeError):
        wire.decode_token(b"\x02" + b"\x00" * 16)
    with pytest.raises(wire.DecodeError):
        wire.decode_token(b"\x01" + b"\x00" * 17)


def test_upload_length_arithmetic():
    rng = random.Random(4)
    entries = [(d % 14, rng.randbytes(16)) for d in range(1344)]
    body = wire.encode_upload("123456654321", entries)
    assert len(body) == 1 + 12 + 2 + 1344 * 18


def test_upload_round_trip():
    rng = random.Random(5)
    for _ in range(200):
        entries = [(rng.randrange(100), rng.randbytes(16)) for _ in range(rng.randrange(20))]
        tan = str(rng.randrange(10**12)).zfill(12)
        msg = wire.decode_upload(wire.encode_upload(tan, entries))
        assert msg.tan == tan
        assert list(msg.entries) == entries


def test_upload_count_mismatch_rejected():
    body = bytearray(wire.encode_upload("000000000000", [(1, b"\xaa" * 16)]))
    body[13:15] = (2).to_bytes(2, "big")  # lie about the count
    with pytest.raises(wire.DecodeError):
        wire.decode_upload(bytes(body))


def test_upload_non_digit_tan_rejected():
    body = bytearray(wire.encode_upload("000000000000", []))
    body[1] = ord("x")
    with pytest.raises(wire.DecodeError):
        wire.decode_upload(bytes(body))


def test_niid_list_empty():
    body = wire.encode_niid_list(0, [], [])
    msg = wire.decode_niid_list(body)
    assert msg.niids == () and msg.revoked == ()
    assert len(body) == 1 + 2 + 4 + 4


def test_niid_list_round_trip_and_canonical():
    rng = random.Random(6)
    ids = [rng.randbytes(16) for _ in range(50)]
    revoked = [rng.randbytes(16) for _ in range(10)]
    a = wire.encode_niid_list(3, ids, revoked)
    b = wire.encode_niid_list(3, list(reversed(ids)), revoked + revoked)
    assert a == b  # canonical regardless of construction order
    msg = wire.decode_niid_list(a)
    assert list(msg.niids) == sorted(set(ids))
    assert list(msg.revoked) == sorted(set(revoked))


def test_niid_list_unsorted_rejected():
    rng = random.Random(7)
    ids = sorted(rng.randbytes(16) for _ in range(4))
    body = bytearray(wire.encode_niid_list(0, ids, []))
    # swap two identifiers in place to break the sort invariant
    off = 1 + 2 + 4
    body[off : off + 16], body[off + 16 : off + 32] = (
        body[off + 16 : off + 32],
        body[off : off + 16],
    )
    with pytest.raises(wire.DecodeError):
        wire.decode_niid_list(bytes(body))


@given(st.binary(max_size=80))
@settings(max_examples=500)
def test_fuzz_decoders_never_crash(data):
    for decoder in (wire.decode_token, wire.decode_upload, wire.decode_niid_list):
        try:
            decoder(data)
        except wire.DecodeError:
            pass


def test_records_round_trip():
    rng = random.Random(8)
    recs = [rng.randbytes(rng.randrange(40)) for _ in range(30)]
    assert wire.decode_records(wire.encode_records(recs)) == recs


def test_records_truncated():
    blob = wire.encode_records([b"abcdef"])
    with pytest.raises(wire.DecodeError):
        wire.decode_records(blob[:-1])
