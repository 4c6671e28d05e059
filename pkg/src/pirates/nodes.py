"""Coordinator, relay and worker as transport-free state machines.

Each handler takes a decoded message and returns a list of ``Outbound``
messages; drivers (in-process or TCP) deliver them.  Node names are
``coordinator``, ``relay:<i>``, ``worker:<i>`` and ``client:<mailbox id>``;
the broadcast targets ``*clients``, ``*relays`` and ``*workers`` expand to
every connected node of that role.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import EpochSchedule
from .crypto import HeCiphertext, HeParams, sym_ciphertext_size
from .dialing import make_cover_invite
from .errors import BadToken, LengthMismatch, RegistrationClosed, UnknownClient, WrongQueryCount, WrongSize
from .mapping import SEED_SIZE, BucketMapping, build_mapping, n_buckets_for
from .pir import PirAnswer, answer_matrix, to_limbs
from .wire import (
    Addr,
    AnswerSet,
    BucketLists,
    Directory,
    Hello,
    InviteBroadcast,
    InviteSubmit,
    MailboxBroadcast,
    Phase,
    PhaseAnnounce,
    QuerySubmit,
    RegInfo,
    Role,
    SnippetSubmit,
)

TOKEN_SIZE = 16
ALL_CLIENTS = "*clients"
ALL_RELAYS = "*relays"
ALL_WORKERS = "*workers"


def client_name(mailbox_id: int) -> str:
    return f"client:{mailbox_id}"


def relay_name(i: int) -> str:
    return f"relay:{i}"


def worker_name(i: int) -> str:
    return f"worker:{i}"


@dataclass(frozen=True)
class Outbound:
    dest: str
    msg: object


@dataclass
class ClientRecord:
    info: RegInfo
    public_key: bytes


class Coordinator:
    """Registration, epoch orchestration and mapping generation."""

    def __init__(
        self,
        n_relays: int,
        n_workers: int,
        group_size: int,
        schedule: EpochSchedule | None = None,
        simulated_users: int = 0,
        he_params: HeParams | None = None,
        seed_source=None,
    ):
        if n_relays < 1 or n_workers < 1:
            raise ValueError("need at least one relay and one worker")
        self.n_relays = n_relays
        self.n_workers = n_workers
        self.group_size = group_size
        self.n_buckets = n_buckets_for(group_size)
        self.schedule = schedule or EpochSchedule()
        self.simulated_users = simulated_users
        self.he_params = he_params or HeParams()
        # callable returning a fresh mapping seed; tests pin it for paired runs
        self.seed_source = seed_source or (lambda: os.urandom(SEED_SIZE))
        self.relay_addrs: list[Addr] = [("", 0)] * n_relays
        self.worker_addrs: list[Addr] = [("", 0)] * n_workers
        self.clients: list[ClientRecord] = []
        self.epoch = 0
        self.in_epoch = False
        self.mapping: BucketMapping | None = None
        self.seeds: list[bytes] = []

    @property
    def n_mailboxes(self) -> int:
        return len(self.clients)

    def register_server(self, hello: Hello, index: int) -> None:
        addrs = self.relay_addrs if hello.role == Role.RELAY else self.worker_addrs
        addrs[index] = (hello.host, hello.port)

    def server_info(self, role: Role, index: int) -> RegInfo:
        return RegInfo(
            0,
            bytes(TOKEN_SIZE),
            index if role == Role.RELAY else 0,
            index if role == Role.WORKER else 0,
            self.n_mailboxes,
            list(self.relay_addrs),
            list(self.worker_addrs),
        )

    def register(self, hello: Hello) -> tuple[RegInfo, list[Outbound]]:
        if self.in_epoch:
            raise RegistrationClosed("registration opens only between epochs")
        mailbox = len(self.clients) + 1
        info = RegInfo(
            mailbox,
            os.urandom(TOKEN_SIZE),
            (mailbox - 1) % self.n_relays,
            (mailbox - 1) % self.n_workers,
            mailbox,
            list(self.relay_addrs),
            list(self.worker_addrs),
        )
        self.clients.append(ClientRecord(info, hello.public_key))
        out = [
            Outbound(client_name(mailbox), info),
            Outbound(relay_name(info.relay_index), info),
            Outbound(worker_name(info.worker_index), info),
        ]
        return info, out

    def directory(self) -> Directory:
        return Directory({c.public_key: c.info.mailbox_id for c in self.clients})

    def start_epoch(self, start_time: float | None = None) -> list[Outbound]:
        if not self.clients:
            raise RuntimeError("no registered clients")
        self.epoch += 1
        self.in_epoch = True
        seed = self.seed_source()
        self.seeds.append(seed)
        self.mapping = build_mapping(self.n_mailboxes, self.n_buckets, seed, self.simulated_users)
        announce = PhaseAnnounce(
            Phase.EPOCH,
            self.epoch,
            seed,
            self.n_mailboxes,
            self.n_buckets,
            self.schedule,
            time.time() if start_time is None else start_time,
            self.simulated_users,
            self.he_params,
        )
        lists = BucketLists(self.epoch, self.mapping.bucket_lists)
        return [
            Outbound(ALL_WORKERS, lists),
            Outbound(ALL_RELAYS, announce),
            Outbound(ALL_WORKERS, announce),
            Outbound(ALL_CLIENTS, self.directory()),
            Outbound(ALL_CLIENTS, announce),
        ]

    def end_epoch(self) -> None:
        self.in_epoch = False

    def shutdown(self) -> list[Outbound]:
        msg = PhaseAnnounce(Phase.SHUTDOWN, self.epoch, bytes(SEED_SIZE), self.n_mailboxes, self.n_buckets, self.schedule)
        return [Outbound(dest, msg) for dest in (ALL_CLIENTS, ALL_RELAYS, ALL_WORKERS)]


class Relay:
    """Client-facing collector: invites in dialing, snippets in every round."""

    def __init__(self, index: int, rng: np.random.Generator | None = None):
        self.index = index
        self.rng = rng if rng is not None else np.random.default_rng()
        self.tokens: dict[int, bytes] = {}
        self.announce: PhaseAnnounce | None = None
        self.invites: dict[int, bytes] = {}
        self.snippets: dict[int, bytes] = {}
        self.round = 0
        self.substituted = 0

    def on_reg_info(self, info: RegInfo) -> None:
        if info.mailbox_id:
            self.tokens[info.mailbox_id] = info.auth_token

    @property
    def clients(self) -> list[int]:
        return sorted(self.tokens)

    @property
    def record_size(self) -> int:
        return sym_ciphertext_size(self.announce.schedule.capacity)

    def on_phase(self, announce: PhaseAnnounce) -> None:
        self.announce = announce
        self.invites.clear()
        self.snippets.clear()
        self.round = 1

    def _check(self, mailbox: int, token: bytes) -> None:
        expected = self.tokens.get(mailbox)
        if expected is None or expected != token:
            raise BadToken(f"token rejected for mailbox {mailbox}")

    def accept_invite(self, msg: InviteSubmit) -> None:
        self._check(msg.mailbox_id, msg.token)
        if len(msg.invite) != 32:
            raise WrongSize("invite must be 32 bytes")
        self.invites[msg.mailbox_id] = msg.invite  # last write wins

    def broadcast_invites(self) -> list[Outbound]:
        package = []
        for m in self.clients:
            inv = self.invites.get(m)
            if inv is None:
                inv = make_cover_invite(self.rng)
                self.substituted += 1
            package.append(inv)
        return [Outbound(ALL_CLIENTS, InviteBroadcast(self.announce.epoch, self.index, package))]

    def accept_snippet(self, msg: SnippetSubmit) -> None:
        self._check(msg.mailbox_id, msg.token)
        if len(msg.ciphertext) != self.record_size:
            raise WrongSize(f"snippet of {len(msg.ciphertext)} bytes, expected {self.record_size}")
        if msg.round != self.round or (self.announce and msg.epoch != self.announce.epoch):
            return  # late or early: treated as absent
        self.snippets[msg.mailbox_id] = msg.ciphertext

    def broadcast_mailboxes(self) -> list[Outbound]:
        size = self.record_size
        records = {}
        for m in self.clients:
            ct = self.snippets.get(m)
            if ct is None:
                ct = self.rng.bytes(size)
                self.substituted += 1
            records[m] = ct
        # simulated users: each virtual id carries a copy of a real record
        n = self.announce.n_mailboxes
        for v in range(n + 1, self.announce.simulated_users + 1):
            src = (v - 1) % n + 1
            if src in records:
                records[v] = records[src]
        msg = MailboxBroadcast(self.announce.epoch, self.round, self.index, records, size)
        self.snippets.clear()
        self.round += 1
        return [Outbound(ALL_WORKERS, msg)]


@dataclass
class RoundTiming:
    preprocess_s: float = 0.0
    reply_s: float = 0.0


class Worker:
    """Stores each client's B queries for the epoch and answers them every round."""

    def __init__(
        self,
        index: int,
        n_relays: int = 1,
        parallel: bool = False,
        max_threads: int | None = None,
        throttle_ms: float = 0.0,
    ):
        self.index = index
        self.n_relays = n_relays
        self.parallel = parallel
        self.max_threads = max_threads
        self.throttle_ms = throttle_ms
        self.clients: set[int] = set()
        self.announce: PhaseAnnounce | None = None
        self.bucket_lists: list[list[int]] = []
        self.queries: dict[int, QuerySubmit] = {}
        self.pending: dict[int, dict[int, MailboxBroadcast]] = {}
        self.timings: list[RoundTiming] = []
        self.overruns = 0

    def on_reg_info(self, info: RegInfo) -> None:
        if info.mailbox_id:
            self.clients.add(info.mailbox_id)
        elif info.relays:
            self.n_relays = len(info.relays)

    def on_phase(self, announce: PhaseAnnounce) -> None:
        self.announce = announce
        self.queries.clear()
        self.pending.clear()

    def on_bucket_lists(self, msg: BucketLists) -> None:
        self.bucket_lists = msg.lists

    def query_length(self, bucket: int) -> int:
        return max(1, len(self.bucket_lists[bucket - 1]))

    def store_queries(self, msg: QuerySubmit) -> None:
        if msg.client_tag not in self.clients:
            raise UnknownClient(msg.client_tag)
        if len(msg.queries) != len(self.bucket_lists):
            raise WrongQueryCount(f"{len(msg.queries)} queries for {len(self.bucket_lists)} buckets")
        for b, q in enumerate(msg.queries, start=1):
            if len(q) != self.query_length(b):
                raise LengthMismatch(f"bucket {b}: query of {len(q)} for {self.query_length(b)} items")
        self.queries[msg.client_tag] = msg  # a resubmission replaces the previous set

    def accept_mailboxes(self, msg: MailboxBroadcast) -> bool:
        """Buffer one relay's records; True once every relay has delivered this round."""
        got = self.pending.setdefault(msg.round, {})
        got[msg.relay_index] = msg
        return len(got) >= self.n_relays

    def _bucket_limbs(self, records: dict[int, bytes], size: int, t: int) -> list[np.ndarray]:
        out = []
        for lst in self.bucket_lists:
            rows = [records.get(m, bytes(size)) for m in lst] or [bytes(size)]
            raw = np.frombuffer(b"".join(rows), dtype=np.uint8).reshape(len(rows), size)
            out.append(to_limbs(raw, t))
        return out

    def answer_round(self, round_index: int) -> list[Outbound]:
        """Assemble buckets from this round's broadcasts and answer every stored query set."""
        t0 = time.perf_counter()
        broadcasts = self.pending.pop(round_index, {})
        if len(broadcasts) < self.n_relays:
            self.overruns += 1
        records: dict[int, bytes] = {}
        size = sym_ciphertext_size(self.announce.schedule.capacity) if self.announce else 0
        for msg in broadcasts.values():
            records.update(msg.records)
            size = msg.record_size
        tags = sorted(self.queries)
        if not tags:
            self.timings.append(RoundTiming(time.perf_counter() - t0, 0.0))
            return []
        params = self.queries[tags[0]].queries[0].selection.params
        limbs = self._bucket_limbs(records, size, params.t)
        t1 = time.perf_counter()

        def answer_bucket(b: int) -> np.ndarray:
            sel = np.stack([self.queries[tag].queries[b].selection.data for tag in tags], axis=1)
            return answer_matrix(limbs[b], sel, params)  # (clients, L, n+1)

        buckets = range(len(self.bucket_lists))
        if self.parallel:
            with ThreadPoolExecutor(self.max_threads) as pool:
                per_bucket = list(pool.map(answer_bucket, buckets))
        else:
            per_bucket = [answer_bucket(b) for b in buckets]
        if self.throttle_ms:
            remaining = self.throttle_ms / 1000 - (time.perf_counter() - t0)
            if remaining > 0:
                time.sleep(remaining)
        t2 = time.perf_counter()
        self.timings.append(RoundTiming(t1 - t0, t2 - t1))
        out = []
        for j, tag in enumerate(tags):
            answers = [
                PirAnswer(HeCiphertext(params, per_bucket[b][j]), tag, b + 1) for b in buckets
            ]
            out.append(Outbound(client_name(tag), AnswerSet(tag, self.announce.epoch, round_index, answers)))
        return out


__all__ = [
    "ALL_CLIENTS",
    "ALL_RELAYS",
    "ALL_WORKERS",
    "Coordinator",
    "Outbound",
    "Relay",
    "RoundTiming",
    "Worker",
    "client_name",
    "relay_name",
    "worker_name",
]
