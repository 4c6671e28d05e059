import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pirates.config import EpochSchedule, snippet_capacity
from pirates.crypto import HeParams
from pirates.errors import Oversize, OversizeFrame, Truncated, UnknownType
from pirates.pir import PirDatabase, pir_answer, pir_query, pir_setup
from pirates.wire import (
    HEADER_SIZE,
    AnswerSet,
    BucketLists,
    Directory,
    FrameDecoder,
    Hello,
    InviteBroadcast,
    InviteSubmit,
    MailboxBroadcast,
    MessageType,
    Phase,
    PhaseAnnounce,
    QuerySubmit,
    RegInfo,
    Role,
    SnippetSubmit,
    decode_frame,
    decode_frames,
    encode_frame,
    encode_message,
    pad_snippet,
    parse_payload,
    unpad_snippet,
)

PARAMS = HeParams(n=64)


def sample_messages():
    pk, sk = pir_setup(128, 4, PARAMS, np.random.default_rng(0))
    _, q = pir_query(sk, 2, 4, client_tag=3, bucket_index=1)
    db = PirDatabase([bytes([i]) * 5 for i in range(4)], 5)
    a = pir_answer(pk, db, q)
    return [
        Hello(Role.CLIENT, 0, os.urandom(16), os.urandom(32), "127.0.0.1", 9000),
        RegInfo(4, os.urandom(16), 1, 0, 4, [("h", 1), ("h", 2)], [("w", 3)]),
        PhaseAnnounce(Phase.EPOCH, 2, os.urandom(16), 9, 6, EpochSchedule(rounds=3), 1.5, 11, PARAMS),
        Directory({os.urandom(32): 1, os.urandom(32): 2}),
        BucketLists(2, [[1, 2, 3], [2, 3], []]),
        InviteSubmit(4, os.urandom(16), 2, os.urandom(32)),
        InviteBroadcast(2, 0, [os.urandom(32) for _ in range(3)]),
        QuerySubmit(3, 2, [q, q]),
        SnippetSubmit(4, os.urandom(16), 2, 5, os.urandom(80)),
        MailboxBroadcast(2, 5, 1, {1: os.urandom(80), 3: os.urandom(80)}, 80),
        AnswerSet(3, 2, 5, [a, a, a]),
    ]


def test_every_type_round_trips():
    msgs = sample_messages()
    assert {m.TYPE for m in msgs} == set(MessageType)
    for m in msgs:
        frame, used = decode_frame(encode_message(m))
        assert used == len(m.to_bytes()) + HEADER_SIZE
        assert frame.msg_type == m.TYPE
        assert parse_payload(frame.msg_type, frame.payload).to_bytes() == m.to_bytes()


def test_phase_announce_fields():
    m = sample_messages()[2]
    back = PhaseAnnounce.from_bytes(m.to_bytes())
    assert back == m


@given(st.sampled_from(list(MessageType)), st.binary(max_size=200))
def test_frame_round_trip(t, payload):
    buf = encode_frame(t, payload)
    assert len(buf) == len(payload) + 5
    assert buf[:4] == len(payload).to_bytes(4, "big") and buf[4] == int(t)
    frame, used = decode_frame(buf)
    assert (frame.msg_type, frame.payload, used) == (t, payload, len(buf))


def test_empty_payload_is_five_bytes():
    assert len(encode_frame(MessageType.HELLO, b"")) == 5


def test_three_concatenated_frames():
    parts = [encode_frame(MessageType.INVITE_SUBMIT, os.urandom(n)) for n in (0, 7, 300)]
    frames = decode_frames(b"".join(parts))
    assert [len(f.payload) for f in frames] == [0, 7, 300]


@given(st.lists(st.binary(max_size=50), max_size=6), st.integers(1, 17))
def test_incremental_decoder(payloads, chunk):
    stream = b"".join(encode_frame(MessageType.DIRECTORY, p) for p in payloads)
    dec, got = FrameDecoder(), []
    for i in range(0, len(stream), chunk):
        got += dec.feed(stream[i : i + chunk])
    assert [f.payload for f in got] == payloads and dec.pending == 0


def test_frame_errors():
    with pytest.raises(Truncated):
        decode_frame(b"\x00\x00")
    with pytest.raises(Truncated):
        decode_frame(encode_frame(MessageType.HELLO, b"abc")[:-1])
    with pytest.raises(UnknownType):
        decode_frame(b"\x00\x00\x00\x00\x63")
    with pytest.raises(OversizeFrame):
        decode_frame(encode_frame(MessageType.HELLO, bytes(10)), max_size=5)
    with pytest.raises(OversizeFrame):
        encode_frame(MessageType.HELLO, bytes(10), max_size=5)


def test_capacity_default():
    assert snippet_capacity(250) == 50


@given(st.integers(2, 120), st.data())
def test_pad_round_trip(cap, data):
    raw = data.draw(st.binary(max_size=cap - 2))
    padded = pad_snippet(raw, cap)
    assert len(padded) == cap and unpad_snippet(padded) == raw


def test_pad_empty_and_oversize():
    assert unpad_snippet(pad_snippet(b"", 50)) == b"" and len(pad_snippet(b"", 50)) == 50
    with pytest.raises(Oversize):
        pad_snippet(bytes(49), 50)


def test_privacy_sensitive_sizes_constant():
    """Sizes of the privacy-sensitive messages depend only on configuration."""
    pk, sk = pir_setup(128, 6, PARAMS)
    sizes = {t: set() for t in ("inv", "q", "snip", "ans")}
    db = PirDatabase([bytes(80)] * 6, 80)
    for i in range(1, 7):
        sizes["inv"].add(len(encode_message(InviteSubmit(i, os.urandom(16), 1, os.urandom(32)))))
        qs = [pir_query(sk, i, 6, client_tag=i, bucket_index=b)[1] for b in (1, 2, 3)]
        sizes["q"].add(len(encode_message(QuerySubmit(i, 1, qs))))
        sizes["snip"].add(len(encode_message(SnippetSubmit(i, os.urandom(16), 1, i, os.urandom(80)))))
        sizes["ans"].add(len(encode_message(AnswerSet(i, 1, i, [pir_answer(pk, db, q) for q in qs]))))
    assert all(len(v) == 1 for v in sizes.values())
