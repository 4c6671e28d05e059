"""Hashing, group-key symmetric encryption and an LWE additively homomorphic scheme.

The homomorphic scheme is secret-key Regev encryption over Z_q with a
power-of-two modulus: a ciphertext for plaintext ``m`` in ``[0, 2^t)`` is
``(a, <a, s> + e + delta * m)`` with ``delta = q / 2^t``.  Addition of
ciphertexts and multiplication by a small plaintext scalar work coefficient
wise, which is all the selection-vector PIR needs.  A public-key variant
(subset sums of an LWE sample matrix expanded from a seed) is provided so
``he_encrypt`` accepts either key half.

All arithmetic is carried out in ``uint64``; wrap-around mod 2^64 is harmless
because q divides 2^64.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import MalformedPadding, OversizePlaintext

DIGEST_SIZE = 32
KEY_SIZE = 32
IV_SIZE = 16
BLOCK_SIZE = 16
# 250 ms of speech at 1.6 kbit/s
DEFAULT_CAPACITY = 50

_MIN_PAD = BLOCK_SIZE


def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the protocol's H()
    """SHA3-256 digest, always 32 bytes."""
    return hashlib.sha3_256(data).digest()


def new_group_key() -> bytes:
    return os.urandom(KEY_SIZE)


def round_iv(epoch_iv: bytes, round_index: int) -> bytes:
    """Per-round CBC IV: hash(epoch_iv || round) truncated to 16 bytes."""
    return hash(epoch_iv + round_index.to_bytes(4, "big"))[:IV_SIZE]


# ---------------------------------------------------------------------------
# Symmetric encryption (AES-256-CBC with fixed-length padding)
# ---------------------------------------------------------------------------


def sym_ciphertext_size(capacity: int) -> int:
    """Ciphertext length for a deployment whose plaintexts hold ``capacity`` bytes.

    At least one full block of padding is always present so random or
    wrongly-keyed ciphertexts are rejected with probability ~1 - 2^-120.
    """
    return -(-(capacity + _MIN_PAD) // BLOCK_SIZE) * BLOCK_SIZE


def _cipher(key: bytes, iv: bytes) -> Cipher:
    if len(iv) != IV_SIZE:
        raise ValueError(f"IV must be {IV_SIZE} bytes, got {len(iv)}")
    return Cipher(algorithms.AES(key), modes.CBC(iv))


def sym_encrypt(key: bytes, iv: bytes, plaintext: bytes, capacity: int = DEFAULT_CAPACITY) -> bytes:
    if len(plaintext) > capacity:
        raise OversizePlaintext(f"{len(plaintext)} bytes exceeds capacity {capacity}")
    size = sym_ciphertext_size(capacity)
    padded = plaintext + b"\x80" + bytes(size - len(plaintext) - 1)
    enc = _cipher(key, iv).encryptor()
    return enc.update(padded) + enc.finalize()


def sym_decrypt(key: bytes, iv: bytes, ct: bytes) -> bytes:
    if len(ct) == 0 or len(ct) % BLOCK_SIZE:
        raise MalformedPadding("ciphertext is not a whole number of blocks")
    dec = _cipher(key, iv).decryptor()
    padded = dec.update(ct) + dec.finalize()
    body = padded.rstrip(b"\x00")
    if not body or body[-1] != 0x80 or len(padded) - len(body) + 1 < _MIN_PAD:
        raise MalformedPadding("padding check failed")
    return body[:-1]


# ---------------------------------------------------------------------------
# LWE additively homomorphic encryption
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeParams:
    """Lattice parameters.  ``q`` must be a power of two and a multiple of 2^t."""

    n: int = 1024
    q: int = 2**56
    t: int = 10
    sigma: float = 3.2
    pk_rows: int | None = None

    def __post_init__(self):
        if self.q & (self.q - 1) or not 2 <= self.q <= 2**64:
            raise ValueError("q must be a power of two <= 2^64")
        if self.q.bit_length() - 1 <= self.t:
            raise ValueError("q must exceed 2^t")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def log_q(self) -> int:
        return self.q.bit_length() - 1

    @property
    def delta_shift(self) -> int:
        return self.log_q - self.t

    @property
    def mask(self) -> np.uint64:
        return np.uint64(self.q - 1)

    @property
    def plain_mask(self) -> np.uint64:
        return np.uint64((1 << self.t) - 1)

    @property
    def coeff_bytes(self) -> int:
        return -(-self.log_q // 8)

    @property
    def rows(self) -> int:
        return self.pk_rows if self.pk_rows is not None else self.n

    @property
    def ciphertext_bytes(self) -> int:
        return (self.n + 1) * self.coeff_bytes


@dataclass
class HeSecretKey:
    params: HeParams
    s: np.ndarray = field(repr=False)


@dataclass
class HePublicKey:
    params: HeParams
    seed: bytes
    b: np.ndarray = field(repr=False)

    def matrix(self) -> np.ndarray:
        return _expand(self.seed, (self.params.rows, self.params.n), self.params)

    def to_bytes(self) -> bytes:
        return self.seed + _coeffs_to_bytes(self.b, self.params.coeff_bytes)


@dataclass
class HeKeyPair:
    public: HePublicKey
    secret: HeSecretKey


@dataclass
class HeCiphertext:
    """One ciphertext or a batch: ``data[..., :n]`` is ``a``, ``data[..., n]`` is ``b``."""

    params: HeParams
    data: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return 1 if self.data.ndim == 1 else self.data.shape[0]

    def __getitem__(self, idx) -> HeCiphertext:
        return HeCiphertext(self.params, self.data[idx])

    def __add__(self, other: HeCiphertext) -> HeCiphertext:
        return he_add(self, other)

    def to_bytes(self) -> bytes:
        return _coeffs_to_bytes(self.data, self.params.coeff_bytes)

    @classmethod
    def from_bytes(cls, params: HeParams, buf: bytes, count: int | None = None) -> HeCiphertext:
        width = params.coeff_bytes
        per = (params.n + 1) * width
        if count is None:
            if len(buf) != per:
                raise ValueError(f"expected {per} bytes, got {len(buf)}")
            return cls(params, _coeffs_from_bytes(buf, width))
        if len(buf) != count * per:
            raise ValueError(f"expected {count * per} bytes, got {len(buf)}")
        return cls(params, _coeffs_from_bytes(buf, width).reshape(count, params.n + 1))


def _coeffs_to_bytes(arr: np.ndarray, width: int) -> bytes:
    raw = np.ascontiguousarray(arr, dtype="<u8").reshape(-1).view(np.uint8).reshape(-1, 8)
    return raw[:, :width].tobytes()


def _coeffs_from_bytes(buf: bytes, width: int) -> np.ndarray:
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, width)
    out = np.zeros((raw.shape[0], 8), dtype=np.uint8)
    out[:, :width] = raw
    return out.view("<u8").reshape(-1).astype(np.uint64)


def _rng(rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng()


def _uniform(rng: np.random.Generator, shape, params: HeParams) -> np.ndarray:
    x = rng.integers(0, np.iinfo(np.uint64).max, size=shape, dtype=np.uint64, endpoint=True)
    return x & params.mask


def _noise(rng: np.random.Generator, shape, params: HeParams) -> np.ndarray:
    e = np.rint(rng.normal(0.0, params.sigma, size=shape)).astype(np.int64)
    return e.astype(np.uint64) & params.mask


def _expand(seed: bytes, shape, params: HeParams) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(seed, "big")))
    return _uniform(gen, shape, params)


def he_keygen(params: HeParams | None = None, rng: np.random.Generator | None = None) -> HeKeyPair:
    params = params or HeParams()
    rng = _rng(rng)
    s = _uniform(rng, params.n, params)
    seed = rng.bytes(16)
    a = _expand(seed, (params.rows, params.n), params)
    b = (a @ s + _noise(rng, params.rows, params)) & params.mask
    return HeKeyPair(HePublicKey(params, seed, b), HeSecretKey(params, s))


def he_encrypt(key: HeSecretKey | HePublicKey, m, rng: np.random.Generator | None = None) -> HeCiphertext:
    """Encrypt an integer (or an array of integers, giving a batch) in [0, 2^t)."""
    params = key.params
    rng = _rng(rng)
    msg = np.asarray(m, dtype=np.uint64)
    if np.any(msg > params.plain_mask):
        raise ValueError(f"plaintext must lie in [0, 2^{params.t})")
    shape = msg.shape
    flat = msg.reshape(-1)
    k = flat.shape[0]
    scaled = flat << np.uint64(params.delta_shift)
    if isinstance(key, HeSecretKey):
        a = _uniform(rng, (k, params.n), params)
        b = a @ key.s + _noise(rng, k, params) + scaled
    else:
        sel = rng.integers(0, 2, size=(k, params.rows), dtype=np.uint64)
        a = (sel @ key.matrix()) & params.mask
        b = sel @ key.b + _noise(rng, k, params) + scaled
    data = np.empty((k, params.n + 1), dtype=np.uint64)
    data[:, : params.n] = a
    data[:, params.n] = b & params.mask
    return HeCiphertext(params, data.reshape(shape + (params.n + 1,)))


def he_decrypt(sk: HeSecretKey, ct: HeCiphertext):
    params = sk.params
    a = ct.data[..., : params.n]
    phase = (ct.data[..., params.n] - a @ sk.s) & params.mask
    half = np.uint64(1 << (params.delta_shift - 1))
    m = ((phase + half) >> np.uint64(params.delta_shift)) & params.plain_mask
    return int(m) if np.ndim(m) == 0 else m


def he_add(x: HeCiphertext, y: HeCiphertext) -> HeCiphertext:
    return HeCiphertext(x.params, (x.data + y.data) & x.params.mask)


def he_scale(x: HeCiphertext, s: int) -> HeCiphertext:
    if not 0 <= s < (1 << x.params.t):
        raise ValueError(f"scalar must lie in [0, 2^{x.params.t})")
    return HeCiphertext(x.params, (x.data * np.uint64(s)) & x.params.mask)
