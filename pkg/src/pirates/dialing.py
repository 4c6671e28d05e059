"""Hash-based invites, cover invites, invite processing and call selection.

Also carries the encryption-based GAddra invite mechanism, used only as a
benchmark baseline.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .crypto import DIGEST_SIZE, IV_SIZE, KEY_SIZE, hash

PUBLIC_KEY_SIZE = 32
EPOCH_BYTES = 8
INVITE_SIZE = DIGEST_SIZE


@dataclass(frozen=True)
class GroupDescriptor:
    group_id: str
    gmk: bytes = field(repr=False)
    member_pubkeys: tuple[bytes, ...]
    my_index: int = 0

    @property
    def me(self) -> bytes:
        return self.member_pubkeys[self.my_index]

    @cached_property
    def others(self) -> tuple[bytes, ...]:
        return tuple(pk for j, pk in enumerate(self.member_pubkeys) if j != self.my_index)

    def for_member(self, pk: bytes) -> GroupDescriptor:
        return GroupDescriptor(self.group_id, self.gmk, self.member_pubkeys, self.member_pubkeys.index(pk))


@dataclass
class DialDecision:
    group: GroupDescriptor | None = None
    epoch_iv: bytes | None = None
    invite: bytes | None = None

    @property
    def in_call(self) -> bool:
        return self.group is not None


def make_invite(gmk: bytes, pk_self: bytes, epoch: int) -> bytes:
    return hash(gmk + pk_self + epoch.to_bytes(EPOCH_BYTES, "big"))


def make_cover_invite(rng=None, length: int = KEY_SIZE + PUBLIC_KEY_SIZE + EPOCH_BYTES) -> bytes:
    """Hash of a random string as long as a real invite's preimage."""
    r = rng.bytes(length) if rng is not None else os.urandom(length)
    return hash(r)


def process_invites(
    received, my_groups: list[GroupDescriptor], epoch: int, include_self: bool = False
) -> list[tuple[GroupDescriptor, set[bytes]]]:
    """For each group, which members' reference invites appear in ``received``.

    ``received`` should support O(1) membership tests (a set); the work per
    group is one hash and one lookup per other member.
    """
    if not isinstance(received, (set, frozenset)):
        received = set(received)
    suffix = epoch.to_bytes(EPOCH_BYTES, "big")
    out = []
    for g in my_groups:
        members = g.member_pubkeys if include_self else g.others
        hits = {ref for ref in (hash(g.gmk + pk + suffix) for pk in members) if ref in received}
        if hits:
            out.append((g, hits))
    return out


def choose_call(candidates: list[tuple[GroupDescriptor, set[bytes]]], prefer: str | None = None) -> DialDecision:
    """Accept at most one group.

    A client that dialed itself (``prefer``) joins its own group.  Otherwise
    the group holding the numerically smallest matched invite wins.  Within the
    chosen group, the smallest invite seeds the epoch IV, so every member
    agrees on it.
    """
    if not candidates:
        return DialDecision()
    best = {g.group_id: (g, min(hits, key=_as_int)) for g, hits in candidates}
    if prefer is not None and prefer in best:
        group, winner = best[prefer]
    else:
        group, winner = min(best.values(), key=lambda gw: _as_int(gw[1]))
    return DialDecision(group, winner[:IV_SIZE], winner)


def _as_int(digest: bytes) -> int:
    return int.from_bytes(digest, "big")


# ---------------------------------------------------------------------------
# GAddra baseline: Enc_GMK("hello") invites, every invite trial-decrypted
# ---------------------------------------------------------------------------

HELLO = b"hello"
_HELLO_BLOCK = HELLO + bytes([16 - len(HELLO)]) * (16 - len(HELLO))
GADDRA_INVITE_SIZE = IV_SIZE + 16


def gaddra_make_invite(gmk: bytes, rng=None) -> bytes:
    iv = rng.bytes(IV_SIZE) if rng is not None else os.urandom(IV_SIZE)
    enc = Cipher(algorithms.AES(gmk), modes.CBC(iv)).encryptor()
    return iv + enc.update(_HELLO_BLOCK) + enc.finalize()


def gaddra_cover_invite(rng=None) -> bytes:
    return rng.bytes(GADDRA_INVITE_SIZE) if rng is not None else os.urandom(GADDRA_INVITE_SIZE)


def gaddra_process(received, my_groups: list[GroupDescriptor]) -> list[GroupDescriptor]:
    """Decrypt every received invite under every group key; report groups that see "hello".

    All invites are trial-decrypted in one batched ECB pass per group
    (one-block CBC decryption is D_k(c) xor iv); there is no early exit.
    """
    blob = np.frombuffer(b"".join(received), dtype=np.uint8).reshape(-1, GADDRA_INVITE_SIZE)
    ivs, body = blob[:, :IV_SIZE], np.ascontiguousarray(blob[:, IV_SIZE:]).tobytes()
    target = np.frombuffer(_HELLO_BLOCK, dtype=np.uint8)
    found = []
    for g in my_groups:
        dec = Cipher(algorithms.AES(g.gmk), modes.ECB()).decryptor()
        plain = np.frombuffer(dec.update(body) + dec.finalize(), dtype=np.uint8).reshape(-1, 16) ^ ivs
        if (plain == target).all(axis=1).any():
            found.append(g)
    return found
