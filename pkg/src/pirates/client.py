"""Client behaviour: dialing with cover invites, per-round snippets, decoding, mixing.

``Client`` is transport-free: it consumes decoded messages and returns the
messages to send.  Whatever the client does socially, it emits exactly one
invite and one set of B queries per epoch and exactly one snippet per round.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .crypto import round_iv, sym_ciphertext_size, sym_decrypt, sym_encrypt
from .dialing import DialDecision, GroupDescriptor, choose_call, make_cover_invite, make_invite, process_invites
from .errors import MalformedPadding, Oversize, PhaseMissed
from .mapping import BucketMapping, IndexSelection, build_mapping, select_indices
from .pir import PirSecretKey, PirState, pir_decode, pir_query, pir_setup
from .wire import (
    AnswerSet,
    Directory,
    InviteBroadcast,
    InviteSubmit,
    PhaseAnnounce,
    QuerySubmit,
    RegInfo,
    SnippetSubmit,
    pad_snippet,
    unpad_snippet,
)

INT16_MIN, INT16_MAX = -(2**15), 2**15 - 1


def mix(snippets: list[bytes]) -> bytes:
    """Overlay little-endian int16 PCM payloads with a saturating per-sample sum."""
    if not snippets:
        return b""
    size = len(snippets[0])
    if any(len(s) != size for s in snippets):
        raise ValueError("snippets must share one capacity")
    if len(snippets) == 1:
        return snippets[0]
    even = size + (size & 1)
    acc = np.zeros(even // 2, dtype=np.int32)
    for s in snippets:
        acc += np.frombuffer(s.ljust(even, b"\0"), dtype="<i2")
    return np.clip(acc, INT16_MIN, INT16_MAX).astype("<i2").tobytes()[:size]


def mix_tagged(by_sender: dict[int, bytes]) -> bytes:
    """Opaque payloads: ordered concatenation of (sender u32, length u16, payload) records."""
    return b"".join(struct.pack(">IH", m, len(p)) + p for m, p in sorted(by_sender.items()))


@dataclass
class RoundOutput:
    round: int
    snippets: dict[int, bytes] = field(default_factory=dict)  # partner mailbox -> plaintext
    mixed: bytes = b""
    timed_out: bool = False


@dataclass
class ClientTimings:
    """Per-round client-side step durations in seconds."""

    encrypt: list[float] = field(default_factory=list)
    pir_decode: list[float] = field(default_factory=list)
    decrypt: list[float] = field(default_factory=list)
    mix: list[float] = field(default_factory=list)


class Client:
    def __init__(
        self,
        public_key: bytes,
        groups: list[GroupDescriptor] | None = None,
        rng: np.random.Generator | None = None,
        tagged_mix: bool = True,
    ):
        self.public_key = public_key
        self.groups = [g.for_member(public_key) for g in (groups or [])]
        self.rng = rng if rng is not None else np.random.default_rng()
        self.tagged_mix = tagged_mix
        self.reg: RegInfo | None = None
        self.directory: dict[bytes, int] = {}
        self.timings = ClientTimings()
        self._reset_epoch(None)

    def _reset_epoch(self, announce: PhaseAnnounce | None) -> None:
        self.announce = announce
        self.mapping: BucketMapping | None = None
        self.intent: str | None = None
        self.received_invites: set[bytes] = set()
        self.broadcasts_seen = 0
        self.decision = DialDecision()
        self.selection: IndexSelection | None = None
        self.pir_sk: PirSecretKey | None = None
        self.pir_states: list[PirState] = []
        self.hung_up = False
        self.queries_sent = False

    # -- registration ------------------------------------------------------

    @property
    def mailbox_id(self) -> int:
        return self.reg.mailbox_id if self.reg else 0

    def on_reg_info(self, info: RegInfo) -> None:
        self.reg = info

    def on_directory(self, msg: Directory) -> None:
        self.directory = dict(msg.entries)

    # -- epoch setup -------------------------------------------------------

    @property
    def epoch(self) -> int:
        return self.announce.epoch if self.announce else 0

    @property
    def capacity(self) -> int:
        return self.announce.schedule.capacity

    @property
    def record_size(self) -> int:
        return sym_ciphertext_size(self.capacity)

    def on_phase(self, announce: PhaseAnnounce, now: float | None = None) -> None:
        """Rebuild the mapping locally and draw this epoch's PIR keys."""
        self._reset_epoch(announce)
        if now is not None and now > announce.start_time + announce.schedule.d1_start / 1000:
            raise PhaseMissed(f"epoch {announce.epoch} announce arrived after D1 opened")
        self.mapping = build_mapping(announce.n_mailboxes, announce.n_buckets, announce.seed, announce.simulated_users)
        max_items = max(self.mapping.query_lengths())
        _, self.pir_sk = pir_setup(128, max_items, announce.he_params, self.rng)

    # -- dialing -----------------------------------------------------------

    def make_invite(self, intent: str | None = None) -> InviteSubmit:
        """D1: a real invite for ``intent``'s group, else a cover invite."""
        self.intent = intent
        if intent is not None:
            g = self._group(intent)
            inv = make_invite(g.gmk, g.me, self.epoch)
        else:
            inv = make_cover_invite(self.rng)
        return InviteSubmit(self.mailbox_id, self.reg.auth_token, self.epoch, inv)

    def _group(self, group_id: str) -> GroupDescriptor:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(f"not a member of group {group_id!r}")

    def on_invite_broadcast(self, msg: InviteBroadcast) -> None:
        if msg.epoch == self.epoch:
            self.received_invites.update(msg.invites)
            self.broadcasts_seen += 1

    def make_queries(self) -> QuerySubmit:
        """D3 and D4: decide on a call, then one PIR query per bucket."""
        candidates = process_invites(self.received_invites, self.groups, self.epoch, include_self=True)
        self.decision = choose_call(candidates, prefer=self.intent)
        targets = []
        if self.decision.in_call:
            ids = (self.directory.get(pk) for pk in self.decision.group.others)
            targets = [m for m in ids if m is not None]
        self.selection = select_indices(targets, self.mapping, self.rng)
        queries, self.pir_states = [], []
        for b in range(1, self.mapping.n_buckets + 1):
            st, q = pir_query(
                self.pir_sk,
                self.selection.positions[b - 1],
                self.mapping.query_length(b),
                self.rng,
                client_tag=self.mailbox_id,
                bucket_index=b,
                is_cover=self.selection.targets[b - 1] is None,
                item_size=self.record_size,
            )
            queries.append(q)
            self.pir_states.append(st)
        self.queries_sent = True
        return QuerySubmit(self.mailbox_id, self.epoch, queries)

    # -- communication -----------------------------------------------------

    @property
    def speaking(self) -> bool:
        """Real voice goes out only in a call we can hear, until hang-up."""
        if self.selection is None or self.hung_up:
            return False
        return self.decision.in_call and not self.selection.all_random

    def hangup(self) -> None:
        self.hung_up = True

    def make_snippet(self, round_index: int, voice_in: bytes | None = None) -> SnippetSubmit:
        t0 = time.perf_counter()
        if self.speaking:
            payload = pad_snippet(voice_in or b"", self.capacity)
            iv = round_iv(self.decision.epoch_iv, round_index)
            ct = sym_encrypt(self.decision.group.gmk, iv, payload, self.capacity)
        else:
            ct = self.rng.bytes(self.record_size)
        self.timings.encrypt.append(time.perf_counter() - t0)
        return SnippetSubmit(self.mailbox_id, self.reg.auth_token, self.epoch, round_index, ct)

    def on_answer_set(self, msg: AnswerSet) -> RoundOutput:
        out = RoundOutput(msg.round)
        if self.selection is None or self.selection.all_random or not self.decision.in_call or self.hung_up:
            return out
        iv = round_iv(self.decision.epoch_iv, msg.round)
        for ans in msg.answers:
            target = self.selection.targets[ans.bucket_index - 1]
            if target is None:
                continue  # cover answer
            t0 = time.perf_counter()
            ct = pir_decode(self.pir_sk, self.pir_states[ans.bucket_index - 1], ans)
            t1 = time.perf_counter()
            try:
                payload = sym_decrypt(self.decision.group.gmk, iv, ct)
                out.snippets[target] = unpad_snippet(payload)
            except (MalformedPadding, Oversize):
                pass  # partner silent or unable to hear
            self.timings.pir_decode.append(t1 - t0)
            self.timings.decrypt.append(time.perf_counter() - t1)
        if out.snippets:
            t0 = time.perf_counter()
            out.mixed = mix_tagged(out.snippets) if self.tagged_mix else mix(list(out.snippets.values()))
            self.timings.mix.append(time.perf_counter() - t0)
        return out

    def on_answer_timeout(self, round_index: int) -> RoundOutput:
        return RoundOutput(round_index, timed_out=True)


def synthetic_voice(sender: int, epoch: int, round_index: int, size: int) -> bytes:
    """Deterministic round-and-sender tagged payload standing in for encoded speech."""
    head = struct.pack(">IQI", sender, epoch, round_index)
    return (head * (size // len(head) + 1))[:size]


def random_public_key() -> bytes:
    return os.urandom(32)
