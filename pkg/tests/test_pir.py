import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pirates.crypto import HeParams, he_decrypt
from pirates.errors import IndexOutOfRange, LengthMismatch, WrongItemSize
from pirates.pir import (
    PirAnswer,
    PirDatabase,
    PirQuery,
    answer_matrix,
    from_limbs,
    limb_count,
    pir_answer,
    pir_decode,
    pir_query,
    pir_send,
    pir_setup,
    to_limbs,
)

PARAMS = HeParams()


def limbs_oracle(item: bytes, t: int) -> list[int]:
    """Big-endian t-bit limbs via Python integers."""
    n = limb_count(len(item), t)
    v = int.from_bytes(item, "big") << (n * t - 8 * len(item))
    return [(v >> (t * (n - 1 - k))) & ((1 << t) - 1) for k in range(n)]


@given(st.lists(st.binary(min_size=7, max_size=7), min_size=1, max_size=5), st.integers(2, 16))
def test_to_limbs_matches_integer_oracle(items, t):
    arr = np.frombuffer(b"".join(items), np.uint8).reshape(len(items), 7)
    got = to_limbs(arr, t)
    for row, item in zip(got, items):
        assert list(map(int, row)) == limbs_oracle(item, t)
        assert from_limbs(row, 7, t) == item


@pytest.fixture(scope="module")
def keys():
    return pir_setup(128, 64, PARAMS, np.random.default_rng(5))


def test_setup_boundaries(keys):
    _, sk = keys
    st_, q = pir_query(sk, 64, 64)
    assert len(q) == 64
    _, sk1 = pir_setup(128, 1, PARAMS)
    st1, q1 = pir_query(sk1, 1, 1)
    assert he_decrypt(sk1.he, q1.selection).tolist() == [1]
    with pytest.raises(IndexOutOfRange):
        pir_query(sk1, 2, 2)
    with pytest.raises(ValueError):
        pir_setup(128, 0)


def test_setups_distinct():
    a, _ = pir_setup(128, 4, PARAMS)
    b, _ = pir_setup(128, 4, PARAMS)
    assert a.he.to_bytes() != b.he.to_bytes()


def test_query_oracle_decrypt(keys):
    _, sk = keys
    _, q = pir_query(sk, 2, 4)
    assert he_decrypt(sk.he, q.selection).tolist() == [0, 1, 0, 0]
    with pytest.raises(IndexOutOfRange):
        pir_query(sk, 5, 4)
    with pytest.raises(IndexOutOfRange):
        pir_query(sk, 0, 4)


def test_query_randomized(keys):
    _, sk = keys
    blobs = {pir_query(sk, 3, 8)[1].to_bytes() for _ in range(100)}
    assert len(blobs) == 100


def test_small_single_limb_db(keys):
    pk, sk = keys
    db = PirDatabase([bytes([v]) for v in (10, 20, 30, 40)], 1)
    st_, q = pir_query(sk, 3, 4, item_size=1)
    assert pir_decode(sk, st_, pir_answer(pk, db, q)) == bytes([30])


def test_zero_db(keys):
    pk, sk = keys
    db = PirDatabase.zeros(5, 20)
    st_, q = pir_query(sk, 4, 5, item_size=20)
    assert pir_decode(sk, st_, pir_answer(pk, db, q)) == bytes(20)


def test_send_semantics():
    db = PirDatabase.zeros(4, 3)
    pir_send(db, b"abc", 3)
    pir_send(db, b"xyz", 3)
    assert db.items == [bytes(3), bytes(3), b"xyz", bytes(3)]
    with pytest.raises(IndexOutOfRange):
        pir_send(db, b"abc", 5)
    with pytest.raises(WrongItemSize):
        pir_send(db, b"ab", 1)


def test_send_invalidates_preprocessing(keys):
    pk, sk = keys
    db = PirDatabase.zeros(3, 4)
    db.limb_matrix()
    pir_send(db, b"\xff\x00\xff\x00", 2)
    st_, q = pir_query(sk, 2, 3, item_size=4)
    assert pir_decode(sk, st_, pir_answer(pk, db, q)) == b"\xff\x00\xff\x00"


def test_length_mismatch(keys):
    pk, sk = keys
    _, q = pir_query(sk, 1, 3)
    with pytest.raises(LengthMismatch):
        pir_answer(pk, PirDatabase.zeros(4, 8), q)


@given(st.integers(1, 16), st.data())
def test_correctness_property(keys, n, data):
    pk, sk = keys
    items = [data.draw(st.binary(min_size=12, max_size=12)) for _ in range(n)]
    i = data.draw(st.integers(1, n))
    db = PirDatabase(items, 12)
    st_, q = pir_query(sk, i, n, item_size=12)
    r = pir_answer(pk, db, q)
    assert len(r) == db.n_limbs
    assert pir_decode(sk, st_, r) == items[i - 1]


def test_sizes_independent_of_index(keys):
    pk, sk = keys
    rng = np.random.default_rng(0)
    db = PirDatabase([rng.bytes(96) for _ in range(16)], 96)
    qs = {len(pir_query(sk, i, 16)[1].to_bytes()) for i in range(1, 17)}
    ans = {len(pir_answer(pk, db, pir_query(sk, i, 16)[1]).to_bytes()) for i in range(1, 17)}
    assert qs == {PirQuery.wire_size(PARAMS, 16)}
    assert len(ans) == 1


def test_serialization_roundtrip(keys):
    pk, sk = keys
    db = PirDatabase([bytes([i]) * 9 for i in range(6)], 9)
    st_, q = pir_query(sk, 5, 6, client_tag=42, bucket_index=3, item_size=9)
    q2, end = PirQuery.from_bytes(PARAMS, q.to_bytes())
    assert end == len(q.to_bytes()) and (q2.client_tag, q2.bucket_index) == (42, 3)
    r = pir_answer(pk, db, q2)
    r2, _ = PirAnswer.from_bytes(PARAMS, r.to_bytes())
    assert pir_decode(sk, st_, r2) == bytes([4]) * 9


def test_answer_matrix_batched_equals_single(keys):
    pk, sk = keys
    rng = np.random.default_rng(9)
    db = PirDatabase([rng.bytes(10) for _ in range(7)], 10)
    queries = [pir_query(sk, i, 7)[1] for i in (1, 4, 7)]
    stacked = np.stack([q.selection.data for q in queries], axis=1)
    batched = answer_matrix(db.limb_matrix(), stacked, PARAMS)
    for k, q in enumerate(queries):
        assert np.array_equal(batched[k], pir_answer(pk, db, q).limbs.data)
