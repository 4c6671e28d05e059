import os

import numpy as np
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from hypothesis import given
from hypothesis import strategies as st

from pirates.dialing import (
    GroupDescriptor,
    choose_call,
    gaddra_cover_invite,
    gaddra_make_invite,
    gaddra_process,
    make_cover_invite,
    make_invite,
    process_invites,
)


def sha3_oracle(data: bytes) -> bytes:
    h = hashes.Hash(hashes.SHA3_256())
    h.update(data)
    return h.finalize()


def group(gid="g", size=3, gmk=None):
    pks = tuple(os.urandom(32) for _ in range(size))
    return GroupDescriptor(gid, gmk or os.urandom(32), pks, 0)


def test_invite_vector():
    gmk, pk = b"\x11" * 32, b"\x22" * 32
    assert make_invite(gmk, pk, 7) == sha3_oracle(gmk + pk + (7).to_bytes(8, "big"))


@given(st.binary(min_size=32, max_size=32), st.binary(min_size=32, max_size=32), st.integers(0, 2**40))
def test_invite_deterministic_and_epoch_bound(gmk, pk, e):
    assert make_invite(gmk, pk, e) == make_invite(gmk, pk, e)
    assert make_invite(gmk, pk, e) != make_invite(gmk, pk, e + 1)


def test_cover_invites():
    a, b = make_cover_invite(), make_cover_invite()
    assert len(a) == len(b) == len(make_invite(bytes(32), bytes(32), 1)) == 32
    assert a != b


def test_cover_vs_real_byte_means():
    rng = np.random.default_rng(0)
    cover = np.frombuffer(b"".join(make_cover_invite(rng) for _ in range(10_000)), np.uint8)
    real = np.frombuffer(b"".join(make_invite(rng.bytes(32), rng.bytes(32), e) for e in range(10_000)), np.uint8)
    sigma = np.sqrt(cover.var() / cover.size + real.var() / real.size)
    assert abs(cover.mean() - real.mean()) < 3 * sigma


def test_process_no_real_invites():
    g = group()
    received = {make_cover_invite() for _ in range(50)}
    assert process_invites(received, [g], 3) == []


def test_process_detects_member():
    g = group()
    inv = make_invite(g.gmk, g.member_pubkeys[1], 3)
    received = {inv} | {make_cover_invite() for _ in range(20)}
    assert process_invites(received, [g], 3) == [(g, {inv})]
    # other members detect it too (completeness)
    for j in (0, 2):
        me = g.for_member(g.member_pubkeys[j])
        assert process_invites(received, [me], 3)[0][1] == {inv}
    # a caller does not see its own invite unless asked to
    caller = g.for_member(g.member_pubkeys[1])
    assert process_invites(received, [caller], 3) == []
    assert process_invites(received, [caller], 3, include_self=True)[0][1] == {inv}


def test_two_callers_iv_is_smallest_digest():
    g = group()
    a = make_invite(g.gmk, g.member_pubkeys[1], 5)
    b = make_invite(g.gmk, g.member_pubkeys[2], 5)
    low = min(a, b, key=lambda d: int.from_bytes(d, "big"))
    ivs = set()
    for pk in g.member_pubkeys:
        me = g.for_member(pk)
        d = choose_call(process_invites({a, b}, [me], 5, include_self=True))
        assert d.group.group_id == "g"
        ivs.add(d.epoch_iv)
    assert ivs == {low[:16]}


def test_choose_call_policy():
    assert not choose_call([]).in_call
    g1, g2 = group("g1"), group("g2")
    i1 = make_invite(g1.gmk, g1.member_pubkeys[1], 1)
    i2 = make_invite(g2.gmk, g2.member_pubkeys[1], 1)
    cands = process_invites({i1, i2}, [g1, g2], 1)
    assert choose_call(cands[:1]).group is g1
    smallest = min((i1, "g1"), (i2, "g2"), key=lambda x: int.from_bytes(x[0], "big"))[1]
    assert choose_call(cands).group.group_id == smallest
    other = "g2" if smallest == "g1" else "g1"
    assert choose_call(cands, prefer=other).group.group_id == other


def test_soundness_no_false_detection():
    gs = [group(f"g{k}") for k in range(4)]
    received = {os.urandom(32) for _ in range(100_000)}
    assert process_invites(received, gs, 9, include_self=True) == []


def gaddra_oracle(received, groups):
    found = []
    for g in groups:
        for inv in received:
            dec = Cipher(algorithms.AES(g.gmk), modes.CBC(inv[:16])).decryptor()
            if dec.update(inv[16:]) + dec.finalize() == b"hello" + bytes([11]) * 11:
                found.append(g)
                break
    return found


def test_gaddra_detects_and_matches_per_invite_oracle():
    gs = [group(f"g{k}") for k in range(3)]
    received = [gaddra_cover_invite() for _ in range(200)]
    received.insert(77, gaddra_make_invite(gs[1].gmk))
    assert gaddra_process(received, gs) == gaddra_oracle(received, gs) == [gs[1]]


def test_gaddra_no_false_positive():
    rng = np.random.default_rng(1)
    g = group()
    for _ in range(1000):
        corpus = [gaddra_cover_invite(rng) for _ in range(8)]
        assert gaddra_process(corpus, [g]) == []
