"""Selection-vector computational PIR over one bucket.

A query is a vector of homomorphic ciphertexts, one per database item, where
only the requested position encrypts 1.  The server treats every item as a
sequence of ``t``-bit limbs and returns, per limb position, the homomorphic
inner product of the selection vector with that limb column.  Indices are
1-based.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .crypto import HeCiphertext, HeParams, HePublicKey, HeSecretKey, he_decrypt, he_encrypt, he_keygen
from .errors import IndexOutOfRange, LengthMismatch, WrongItemSize


def limb_count(item_size: int, t: int) -> int:
    return -(-item_size * 8 // t)


def to_limbs(items: np.ndarray, t: int) -> np.ndarray:
    """(N, item_size) uint8 -> (N, L) uint64 of big-endian t-bit limbs."""
    n, size = items.shape
    n_limbs = limb_count(size, t)
    bits = np.unpackbits(items, axis=1)
    padded = np.zeros((n, n_limbs * t), dtype=np.uint64)
    padded[:, : size * 8] = bits
    weights = np.uint64(1) << np.arange(t - 1, -1, -1, dtype=np.uint64)
    return padded.reshape(n, n_limbs, t) @ weights


def from_limbs(limbs: np.ndarray, item_size: int, t: int) -> bytes:
    shifts = np.arange(t - 1, -1, -1, dtype=np.uint64)
    bits = ((np.asarray(limbs, dtype=np.uint64)[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.reshape(-1)[: item_size * 8]).tobytes()


@dataclass
class PirDatabase:
    items: list[bytes]
    item_size: int
    limb_width: int = HeParams.t
    _limbs: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        for it in self.items:
            if len(it) != self.item_size:
                raise WrongItemSize(f"item of {len(it)} bytes in database of {self.item_size}-byte items")

    @classmethod
    def zeros(cls, n_items: int, item_size: int, limb_width: int = HeParams.t) -> PirDatabase:
        return cls([bytes(item_size)] * n_items, item_size, limb_width)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def n_limbs(self) -> int:
        return limb_count(self.item_size, self.limb_width)

    def limb_matrix(self) -> np.ndarray:
        """Preprocessed (N, L) limb matrix, cached until the next write."""
        if self._limbs is None:
            raw = np.frombuffer(b"".join(self.items), dtype=np.uint8).reshape(len(self.items), self.item_size)
            self._limbs = to_limbs(raw, self.limb_width)
        return self._limbs


@dataclass
class PirPublicKey:
    he: HePublicKey
    max_items: int

    @property
    def params(self) -> HeParams:
        return self.he.params


@dataclass
class PirSecretKey:
    he: HeSecretKey
    max_items: int

    @property
    def params(self) -> HeParams:
        return self.he.params


@dataclass
class PirState:
    """Client-local; never serialized."""

    requested_index: int
    is_cover: bool = False
    item_size: int | None = None


_QUERY_HEADER = struct.Struct(">IHIB")  # client_tag, bucket_index, n_items, coeff width
_ANSWER_HEADER = struct.Struct(">IHIB")  # client_tag, bucket_index, n_limbs, coeff width


@dataclass
class PirQuery:
    selection: HeCiphertext
    client_tag: int = 0
    bucket_index: int = 0

    def __len__(self) -> int:
        return self.selection.data.shape[0]

    def to_bytes(self) -> bytes:
        p = self.selection.params
        return _QUERY_HEADER.pack(self.client_tag, self.bucket_index, len(self), p.coeff_bytes) + self.selection.to_bytes()

    @classmethod
    def from_bytes(cls, params: HeParams, buf: bytes, offset: int = 0) -> tuple[PirQuery, int]:
        tag, bucket, count, width = _QUERY_HEADER.unpack_from(buf, offset)
        if width != params.coeff_bytes:
            raise ValueError(f"coefficient width {width} does not match parameters")
        start = offset + _QUERY_HEADER.size
        end = start + count * params.ciphertext_bytes
        sel = HeCiphertext.from_bytes(params, bytes(buf[start:end]), count)
        return cls(sel, tag, bucket), end

    @staticmethod
    def wire_size(params: HeParams, n_items: int) -> int:
        return _QUERY_HEADER.size + n_items * params.ciphertext_bytes


@dataclass
class PirAnswer:
    limbs: HeCiphertext
    client_tag: int = 0
    bucket_index: int = 0

    def __len__(self) -> int:
        return self.limbs.data.shape[0]

    def to_bytes(self) -> bytes:
        p = self.limbs.params
        return _ANSWER_HEADER.pack(self.client_tag, self.bucket_index, len(self), p.coeff_bytes) + self.limbs.to_bytes()

    @classmethod
    def from_bytes(cls, params: HeParams, buf: bytes, offset: int = 0) -> tuple[PirAnswer, int]:
        tag, bucket, count, width = _ANSWER_HEADER.unpack_from(buf, offset)
        if width != params.coeff_bytes:
            raise ValueError(f"coefficient width {width} does not match parameters")
        start = offset + _ANSWER_HEADER.size
        end = start + count * params.ciphertext_bytes
        limbs = HeCiphertext.from_bytes(params, bytes(buf[start:end]), count)
        return cls(limbs, tag, bucket), end


def pir_setup(
    security_param: int = 128,
    max_items: int = 1,
    params: HeParams | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[PirPublicKey, PirSecretKey]:
    """Generate a key pair.

    ``security_param`` is accepted for interface compatibility only; the
    lattice parameters in ``params`` determine the actual scheme.
    """
    if max_items < 1:
        raise ValueError("max_items must be at least 1")
    kp = he_keygen(params or HeParams(), rng)
    return PirPublicKey(kp.public, max_items), PirSecretKey(kp.secret, max_items)


def pir_send(db: PirDatabase, m: bytes, i: int) -> PirDatabase:
    if not 1 <= i <= len(db):
        raise IndexOutOfRange(f"index {i} outside 1..{len(db)}")
    if len(m) != db.item_size:
        raise WrongItemSize(f"expected {db.item_size} bytes, got {len(m)}")
    db.items[i - 1] = m
    db._limbs = None
    return db


def pir_query(
    sk: PirSecretKey,
    i: int,
    n_items: int,
    rng: np.random.Generator | None = None,
    *,
    client_tag: int = 0,
    bucket_index: int = 0,
    is_cover: bool = False,
    item_size: int | None = None,
) -> tuple[PirState, PirQuery]:
    if n_items > sk.max_items:
        raise IndexOutOfRange(f"{n_items} items exceeds the key's bound of {sk.max_items}")
    if not 1 <= i <= n_items:
        raise IndexOutOfRange(f"index {i} outside 1..{n_items}")
    onehot = np.zeros(n_items, dtype=np.uint64)
    onehot[i - 1] = 1
    sel = he_encrypt(sk.he, onehot, rng)
    return PirState(i, is_cover, item_size), PirQuery(sel, client_tag, bucket_index)


def answer_matrix(limbs: np.ndarray, selections: np.ndarray, params: HeParams) -> np.ndarray:
    """Homomorphic inner products for many stacked selection vectors at once.

    ``limbs`` is (N, L); ``selections`` is (N, ..., n+1).  Returns (..., L, n+1).
    """
    n_items = limbs.shape[0]
    flat = selections.reshape(n_items, -1)
    out = (limbs.T @ flat) & params.mask
    rest = selections.shape[1:-1]
    out = out.reshape((limbs.shape[1],) + rest + (params.n + 1,))
    return np.moveaxis(out, 0, -2) if rest else out


def pir_answer(pk: PirPublicKey | HeParams | None, db: PirDatabase, q: PirQuery) -> PirAnswer:
    if len(q) != len(db):
        raise LengthMismatch(f"query has {len(q)} components, database has {len(db)} items")
    params = q.selection.params
    data = answer_matrix(db.limb_matrix(), q.selection.data, params)
    return PirAnswer(HeCiphertext(params, data), q.client_tag, q.bucket_index)


def pir_decode(sk: PirSecretKey, st: PirState, r: PirAnswer, item_size: int | None = None) -> bytes:
    item_size = item_size or st.item_size
    if item_size is None:
        raise ValueError("item size unknown: pass it to pir_query or pir_decode")
    limbs = he_decrypt(sk.he, r.limbs)
    return from_limbs(np.atleast_1d(limbs), item_size, sk.params.t)
