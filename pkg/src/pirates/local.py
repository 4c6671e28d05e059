"""In-process deployment: every message is framed, logged, decoded and dispatched.

Nothing is shared between nodes except the encoded frames, so transcripts
recorded here have the same shape as those of a TCP deployment.
"""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .client import Client, RoundOutput, synthetic_voice
from .config import EpochSchedule
from .crypto import HeParams
from .dialing import GroupDescriptor
from .errors import PiratesError
from .nodes import ALL_CLIENTS, ALL_RELAYS, ALL_WORKERS, Coordinator, Outbound, Relay, Worker, client_name, relay_name, worker_name
from .transcript import Event, Transcript
from .wire import (
    AnswerSet,
    BucketLists,
    Directory,
    Hello,
    InviteBroadcast,
    InviteSubmit,
    MailboxBroadcast,
    MessageType,
    PhaseAnnounce,
    QuerySubmit,
    RegInfo,
    Role,
    SnippetSubmit,
    decode_frame,
    encode_message,
    parse_payload,
)


@dataclass
class EpochResult:
    epoch: int
    outputs: dict[int, list[RoundOutput]] = field(default_factory=dict)  # mailbox -> per round
    in_call: dict[int, str | None] = field(default_factory=dict)
    all_random: dict[int, bool] = field(default_factory=dict)
    speaking: dict[int, bool] = field(default_factory=dict)
    rejected: list[str] = field(default_factory=list)


class LocalDeployment:
    def __init__(
        self,
        n_relays: int = 1,
        n_workers: int = 1,
        group_size: int = 3,
        schedule: EpochSchedule | None = None,
        simulated_users: int = 0,
        he_params: HeParams | None = None,
        seed: int | None = None,
        worker_parallel: bool = False,
        throttle_ms: float = 0.0,
        tagged_mix: bool = True,
    ):
        self.rng = np.random.default_rng(seed)
        seed_rng = np.random.default_rng(self.rng.integers(2**63))
        self.coordinator = Coordinator(
            n_relays,
            n_workers,
            group_size,
            schedule,
            simulated_users,
            he_params,
            seed_source=lambda: seed_rng.bytes(16),
        )
        self.relays = [Relay(i, self._child_rng()) for i in range(n_relays)]
        self.workers = [Worker(i, n_relays, worker_parallel, throttle_ms=throttle_ms) for i in range(n_workers)]
        self.clients: dict[int, Client] = {}
        self.by_key: dict[bytes, Client] = {}
        self.transcript = Transcript()
        self.tagged_mix = tagged_mix
        self.transfer_s: dict[int, list[float]] = defaultdict(list)
        self._ctx = (0, 0)
        self._last_output: dict[int, RoundOutput] = {}
        self._rejected: list[str] = []
        self._pending_client: Client | None = None

    def _child_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng.integers(2**63))

    # -- delivery ----------------------------------------------------------

    def _expand(self, dest: str) -> list[str]:
        if dest == ALL_CLIENTS:
            return [client_name(m) for m in sorted(self.clients)]
        if dest == ALL_RELAYS:
            return [relay_name(r.index) for r in self.relays]
        if dest == ALL_WORKERS:
            return [worker_name(w.index) for w in self.workers]
        return [dest]

    def send(self, src: str, out: list[Outbound]) -> None:
        for ob in out:
            for dest in self._expand(ob.dest):
                self._deliver(src, dest, ob.msg)

    def _deliver(self, src: str, dest: str, msg) -> None:
        epoch, rnd = self._ctx
        rnd = getattr(msg, "round", rnd) if isinstance(msg, (SnippetSubmit, MailboxBroadcast, AnswerSet)) else 0
        t0 = time.perf_counter()
        frame_bytes = encode_message(msg)
        frame, _ = decode_frame(frame_bytes)
        decoded = parse_payload(frame.msg_type, frame.payload)
        self.transfer_s[int(frame.msg_type)].append(time.perf_counter() - t0)
        now = time.time()
        size = len(frame_bytes)
        self.transcript.record(Event(src, "out", dest, int(frame.msg_type), size, epoch, rnd, now))
        self.transcript.record(Event(dest, "in", src, int(frame.msg_type), size, epoch, rnd, now))
        try:
            self._dispatch(src, dest, decoded)
        except PiratesError as exc:
            self._rejected.append(f"{dest} rejected {frame.msg_type.name} from {src}: {exc!r}")

    def _dispatch(self, src: str, dest: str, msg) -> None:
        role, _, idx = dest.partition(":")
        if role == "coordinator":
            if isinstance(msg, Hello):
                _, out = self.coordinator.register(msg)
                self.send("coordinator", out)
            return
        if role == "relay":
            relay = self.relays[int(idx)]
            if isinstance(msg, RegInfo):
                relay.on_reg_info(msg)
            elif isinstance(msg, PhaseAnnounce):
                relay.on_phase(msg)
            elif isinstance(msg, InviteSubmit):
                relay.accept_invite(msg)
            elif isinstance(msg, SnippetSubmit):
                relay.accept_snippet(msg)
            return
        if role == "worker":
            worker = self.workers[int(idx)]
            if isinstance(msg, RegInfo):
                worker.on_reg_info(msg)
            elif isinstance(msg, PhaseAnnounce):
                worker.on_phase(msg)
            elif isinstance(msg, BucketLists):
                worker.on_bucket_lists(msg)
            elif isinstance(msg, QuerySubmit):
                worker.store_queries(msg)
            elif isinstance(msg, MailboxBroadcast):
                if worker.accept_mailboxes(msg):
                    self.send(dest, worker.answer_round(msg.round))
            return
        client = self.clients.get(int(idx)) if role == "client" else None
        if client is None:
            client = self._pending_client
        if isinstance(msg, RegInfo):
            client.on_reg_info(msg)
        elif isinstance(msg, Directory):
            client.on_directory(msg)
        elif isinstance(msg, PhaseAnnounce):
            client.on_phase(msg)
        elif isinstance(msg, InviteBroadcast):
            client.on_invite_broadcast(msg)
        elif isinstance(msg, AnswerSet):
            self._last_output[client.mailbox_id] = client.on_answer_set(msg)

    # -- orchestration -----------------------------------------------------

    def add_client(self, public_key: bytes, groups: list[GroupDescriptor] | None = None) -> Client:
        c = Client(public_key, [g for g in (groups or []) if public_key in g.member_pubkeys], self._child_rng(), self.tagged_mix)
        self._pending_client = c
        self.send(f"client:{len(self.clients) + 1}", [Outbound("coordinator", Hello(Role.CLIENT, public_key=public_key))])
        self.clients[c.mailbox_id] = c
        self.by_key[public_key] = c
        self._pending_client = None
        return c

    def run_epoch(
        self,
        intents: dict[bytes, str] | None = None,
        hangups: dict[bytes, int] | None = None,
        silent: set[bytes] | None = None,
        voice=synthetic_voice,
    ) -> EpochResult:
        """One full epoch.  ``intents`` maps public key -> group to dial; ``silent``
        clients send nothing at all (offline)."""
        intents = intents or {}
        hangups = hangups or {}
        silent = silent or set()
        self._rejected = []
        coord = self.coordinator
        self._ctx = (coord.epoch + 1, 0)
        self.send("coordinator", coord.start_epoch())
        epoch = coord.epoch
        sched = coord.schedule
        active = [c for m, c in sorted(self.clients.items()) if c.public_key not in silent]

        # D1: invites to each client's relay
        for c in active:
            self.send(client_name(c.mailbox_id), [Outbound(relay_name(c.reg.relay_index), c.make_invite(intents.get(c.public_key)))])
        # D2: relay packages to every client
        for relay in self.relays:
            self.send(relay_name(relay.index), relay.broadcast_invites())
        # D3 + D4: decisions and queries
        for c in active:
            self.send(client_name(c.mailbox_id), [Outbound(worker_name(c.reg.worker_index), c.make_queries())])

        result = EpochResult(epoch)
        for c in self.clients.values():
            result.in_call[c.mailbox_id] = c.decision.group.group_id if c.decision.in_call else None
            result.all_random[c.mailbox_id] = bool(c.selection and c.selection.all_random)
            result.speaking[c.mailbox_id] = bool(c.selection) and c.speaking
            result.outputs[c.mailbox_id] = []

        for r in range(1, sched.rounds + 1):
            self._ctx = (epoch, r)
            self._last_output = {}
            for c in active:
                if hangups.get(c.public_key) == r:
                    c.hangup()
                raw = voice(c.mailbox_id, epoch, r, sched.capacity - 2)
                self.send(client_name(c.mailbox_id), [Outbound(relay_name(c.reg.relay_index), c.make_snippet(r, raw))])
            for relay in self.relays:
                self.send(relay_name(relay.index), relay.broadcast_mailboxes())
            for m in sorted(self.clients):
                out = self._last_output.get(m)
                result.outputs[m].append(out if out is not None else self.clients[m].on_answer_timeout(r))
        coord.end_epoch()
        result.rejected = list(self._rejected)
        return result

    def transfer_ms(self, msg_type: MessageType) -> float:
        xs = self.transfer_s.get(int(msg_type), [])
        return 1000 * float(np.mean(xs)) if xs else 0.0
