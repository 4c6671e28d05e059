"""Seed-derived 3-way cuckoo placement of mailboxes into buckets.

Every mailbox lands in three distinct buckets.  Bucket ``k``'s hash function
is ``h_k(i | n) = int(H(seed || k || i || n)[:8]) mod B`` with ``k`` encoded as
one byte and ``i``, ``n`` as 4-byte big-endian integers; buckets are numbered
from 1.  Clients rebuild the mapping from the published seed and must obtain
exactly the lists the coordinator sent to the workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crypto import hash
from .errors import MappingFault, UnknownMailbox

N_HASHES = 3
SEED_SIZE = 16
MAX_NONCE_TRIALS = 10_000


def bucket_hash(seed: bytes, k: int, mailbox: int, nonce: int, n_buckets: int) -> int:
    digest = hash(seed + bytes([k]) + mailbox.to_bytes(4, "big") + nonce.to_bytes(4, "big"))
    return int.from_bytes(digest[:8], "big") % n_buckets + 1


def assign_buckets(mailbox: int, seed: bytes, n_buckets: int) -> tuple[int, int, int, int]:
    """Three pairwise-distinct buckets for ``mailbox`` plus the nonce that produced them."""
    if n_buckets < N_HASHES:
        raise ValueError(f"need at least {N_HASHES} buckets, got {n_buckets}")
    for nonce in range(MAX_NONCE_TRIALS):
        b = tuple(bucket_hash(seed, k, mailbox, nonce, n_buckets) for k in range(N_HASHES))
        if len(set(b)) == N_HASHES:
            return b[0], b[1], b[2], nonce
    raise MappingFault(f"no distinct buckets for mailbox {mailbox} after {MAX_NONCE_TRIALS} nonces")


def n_buckets_for(group_size: int) -> int:
    """1.5 buckets per retrieval, never fewer than the three cuckoo choices."""
    if group_size < 2:
        raise ValueError("group size must be at least 2")
    return max(N_HASHES, -(-3 * (group_size - 1) // 2))


def simulated_bucket_size(users: int, n_buckets: int) -> int:
    return -(-N_HASHES * users // n_buckets)


@dataclass
class BucketMapping:
    n_mailboxes: int
    n_buckets: int
    seed: bytes
    assignment: list[tuple[int, int, int, int]]  # index i-1 -> (b0, b1, b2, nonce)
    bucket_lists: list[list[int]]  # index b-1 -> ascending mailbox ids
    simulated_users: int = 0

    def buckets_of(self, mailbox: int) -> tuple[int, int, int]:
        if not 1 <= mailbox <= self.n_mailboxes:
            raise UnknownMailbox(mailbox)
        return self.assignment[mailbox - 1][:3]

    def position(self, bucket: int, mailbox: int) -> int:
        """1-based position of ``mailbox`` inside ``bucket``'s ordered list."""
        return self.bucket_lists[bucket - 1].index(mailbox) + 1

    def query_length(self, bucket: int) -> int:
        # an empty bucket is served as a single all-zero item
        return max(1, len(self.bucket_lists[bucket - 1]))

    def query_lengths(self) -> list[int]:
        return [self.query_length(b) for b in range(1, self.n_buckets + 1)]


def build_mapping(n_mailboxes: int, n_buckets: int, seed: bytes, simulated_users: int = 0) -> BucketMapping:
    """Map mailboxes 1..N into buckets.

    With ``simulated_users`` > N, each bucket is topped up with virtual
    mailbox ids N+1..U until it holds ``ceil(3U/B)`` entries, so workers carry
    the load of U users while only N real clients exist.  Relays supply the
    virtual records by duplicating real ones.
    """
    if n_mailboxes < 1:
        raise ValueError("need at least one mailbox")
    assignment = [assign_buckets(i, seed, n_buckets) for i in range(1, n_mailboxes + 1)]
    lists: list[list[int]] = [[] for _ in range(n_buckets)]
    for i, (b0, b1, b2, _) in enumerate(assignment, start=1):
        for b in (b0, b1, b2):
            lists[b - 1].append(i)
    if simulated_users > n_mailboxes:
        target = simulated_bucket_size(simulated_users, n_buckets)
        virtual = list(range(n_mailboxes + 1, simulated_users + 1))
        cursor = 0
        for lst in lists:
            need = target - len(lst)
            if need > 0:
                extra = [virtual[(cursor + j) % len(virtual)] for j in range(need)]
                cursor += need
                lst.extend(sorted(extra))
    return BucketMapping(n_mailboxes, n_buckets, seed, assignment, lists, max(simulated_users, 0))


@dataclass
class IndexSelection:
    positions: list[int]  # per bucket, 1-based position within the bucket list
    targets: list[int | None]  # per bucket, the mailbox retrieved there, or None if random
    all_random: bool = False

    @property
    def real(self) -> list[bool]:
        return [t is not None for t in self.targets]


def match_targets(candidates: dict[int, tuple[int, ...]]) -> dict[int, int] | None:
    """Assign each target a distinct bucket from its candidates (augmenting paths).

    Returns target -> bucket, or None if no complete assignment exists.
    """
    owner: dict[int, int] = {}

    def augment(target: int, seen: set[int]) -> bool:
        for b in candidates[target]:
            if b in seen:
                continue
            seen.add(b)
            if b not in owner or augment(owner[b], seen):
                owner[b] = target
                return True
        return False

    for target in candidates:
        if not augment(target, set()):
            return None
    return {t: b for b, t in owner.items()}


def select_indices(targets, mapping: BucketMapping, rng: np.random.Generator | None = None) -> IndexSelection:
    rng = rng if rng is not None else np.random.default_rng()
    wanted = list(dict.fromkeys(targets))
    for t in wanted:
        if not 1 <= t <= mapping.n_mailboxes:
            raise UnknownMailbox(t)
    positions = [int(rng.integers(1, mapping.query_length(b) + 1)) for b in range(1, mapping.n_buckets + 1)]
    chosen: list[int | None] = [None] * mapping.n_buckets
    if not wanted:
        return IndexSelection(positions, chosen, all_random=False)
    matching = None
    if len(wanted) <= mapping.n_buckets:
        matching = match_targets({t: mapping.buckets_of(t) for t in wanted})
    if matching is None:
        return IndexSelection(positions, chosen, all_random=True)
    for t, b in matching.items():
        positions[b - 1] = mapping.position(b, t)
        chosen[b - 1] = t
    return IndexSelection(positions, chosen, all_random=False)

