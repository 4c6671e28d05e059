"""TCP runtime for every role.

Each process runs one asyncio loop.  Relays and workers register with the
coordinator, which hands out the full address lists once all servers are
present.  Clients then register, connect to every relay (to receive the
invite packages), submit to their assigned relay, and keep one connection to
their assigned worker.  Phase boundaries come from the wall-clock start time
in PHASE_ANNOUNCE.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .client import Client, RoundOutput, synthetic_voice
from .config import EpochSchedule
from .crypto import HeParams
from .dialing import GroupDescriptor
from .errors import PhaseMissed, PiratesError
from .nodes import ALL_CLIENTS, ALL_RELAYS, ALL_WORKERS, Coordinator, Outbound, Relay, Worker, client_name, relay_name, worker_name
from .transcript import Event
from .wire import (
    HEADER,
    HEADER_SIZE,
    MAX_FRAME,
    AnswerSet,
    BucketLists,
    Directory,
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
    encode_message,
    parse_payload,
)

log = logging.getLogger("pirates.net")
STREAM_LIMIT = 1 << 26


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def _file_stem(node: str) -> str:
    return node.replace(":", "-")


class NodeLog:
    """Per-process transcript and metrics, flushed line by line."""

    def __init__(self, node: str, out_dir: str | Path | None = None):
        self.node = node
        self._events = self._metrics = None
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            self._events = open(out / f"{_file_stem(node)}.events.jsonl", "w")
            self._metrics = open(out / f"{_file_stem(node)}.metrics.jsonl", "w")

    def rename(self, node: str, out_dir: str | Path | None) -> None:
        self.close()
        self.__init__(node, out_dir)

    def event(self, direction: str, peer: str, msg_type: int, size: int, epoch: int, rnd: int) -> None:
        if self._events:
            e = Event(self.node, direction, peer, int(msg_type), size, epoch, rnd, time.time())
            self._events.write(json.dumps(e.__dict__) + "\n")
            self._events.flush()

    def metric(self, name: str, **fields) -> None:
        if self._metrics:
            self._metrics.write(json.dumps({"node": self.node, "name": name, "ts": time.time(), **fields}) + "\n")
            self._metrics.flush()

    def close(self) -> None:
        for fh in (self._events, self._metrics):
            if fh:
                fh.close()


def _ctx(msg) -> tuple[int, int]:
    return getattr(msg, "epoch", 0), getattr(msg, "round", 0)


class Conn:
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, nlog: NodeLog, peer: str = "?"):
        self.reader = reader
        self.writer = writer
        self.log = nlog
        self.peer = peer
        self._lock = asyncio.Lock()

    async def send(self, msg) -> None:
        frame = encode_message(msg)
        epoch, rnd = _ctx(msg)
        async with self._lock:
            self.log.event("out", self.peer, msg.TYPE, len(frame), epoch, rnd)
            self.writer.write(frame)
            await self.writer.drain()

    async def recv(self):
        try:
            head = await self.reader.readexactly(HEADER_SIZE)
            length, raw_type = HEADER.unpack(head)
            if length > MAX_FRAME:
                raise PiratesError(f"oversize frame from {self.peer}")
            payload = await self.reader.readexactly(length)
        except (asyncio.IncompleteReadError, ConnectionError):
            return None
        msg = parse_payload(MessageType(raw_type), payload)
        epoch, rnd = _ctx(msg)
        self.log.event("in", self.peer, raw_type, HEADER_SIZE + length, epoch, rnd)
        return msg

    def close(self) -> None:
        self.writer.close()


async def connect(addr: tuple[str, int], nlog: NodeLog, peer: str, retries: int = 100) -> Conn:
    for _ in range(retries):
        try:
            reader, writer = await asyncio.open_connection(*addr, limit=STREAM_LIMIT)
            return Conn(reader, writer, nlog, peer)
        except OSError:
            await asyncio.sleep(0.05)
    raise ConnectionError(f"cannot reach {peer} at {addr}")


async def sleep_until(t: float) -> None:
    delay = t - time.time()
    if delay > 0:
        await asyncio.sleep(delay)


async def _start_server(handler, host: str, port: int) -> tuple[asyncio.base_events.Server, int]:
    server = await asyncio.start_server(handler, host, port, limit=STREAM_LIMIT)
    return server, server.sockets[0].getsockname()[1]


# ---------------------------------------------------------------------------
# Coordinator
# ---------------------------------------------------------------------------


@dataclass
class CoordinatorConfig:
    listen: str
    relays: int = 1
    workers: int = 1
    group_size: int = 3
    schedule: EpochSchedule = field(default_factory=EpochSchedule)
    epochs: int = 1
    clients: int = 0  # wait for this many registrations; 0 = use the registration window
    register_ms: int = 2000
    lead_ms: int = 1500
    simulated_users: int = 0
    he_params: HeParams = field(default_factory=HeParams)
    out_dir: str | None = None
    seed: int | None = None


async def run_coordinator(cfg: CoordinatorConfig) -> Coordinator:
    nlog = NodeLog("coordinator", cfg.out_dir)
    seed_rng = np.random.default_rng(cfg.seed) if cfg.seed is not None else None
    coord = Coordinator(
        cfg.relays,
        cfg.workers,
        cfg.group_size,
        cfg.schedule,
        cfg.simulated_users,
        cfg.he_params,
        seed_source=(lambda: seed_rng.bytes(16)) if seed_rng is not None else None,
    )
    conns: dict[str, Conn] = {}
    servers_ready = asyncio.Event()
    client_joined = asyncio.Event()
    counters = {Role.RELAY: 0, Role.WORKER: 0}

    async def deliver(out: list[Outbound]) -> None:
        for ob in out:
            if ob.dest == ALL_CLIENTS:
                targets = [n for n in conns if n.startswith("client:")]
            elif ob.dest == ALL_RELAYS:
                targets = [n for n in conns if n.startswith("relay:")]
            elif ob.dest == ALL_WORKERS:
                targets = [n for n in conns if n.startswith("worker:")]
            else:
                targets = [ob.dest]
            for t in sorted(targets):
                if t in conns:
                    await conns[t].send(ob.msg)

    async def handle(reader, writer):
        conn = Conn(reader, writer, nlog)
        hello = await conn.recv()
        if not isinstance(hello, Hello):
            conn.close()
            return
        if hello.role in (Role.RELAY, Role.WORKER):
            idx = counters[hello.role]
            counters[hello.role] += 1
            name = relay_name(idx) if hello.role == Role.RELAY else worker_name(idx)
            conn.peer = name
            coord.register_server(hello, idx)
            conns[name] = conn
            if counters[Role.RELAY] == cfg.relays and counters[Role.WORKER] == cfg.workers:
                for i in range(cfg.relays):
                    await conns[relay_name(i)].send(coord.server_info(Role.RELAY, i))
                for i in range(cfg.workers):
                    await conns[worker_name(i)].send(coord.server_info(Role.WORKER, i))
                servers_ready.set()
            return
        await servers_ready.wait()
        try:
            info, out = coord.register(hello)
        except PiratesError as exc:
            log.warning("registration refused: %s", exc)
            conn.close()
            return
        conn.peer = client_name(info.mailbox_id)
        conns[conn.peer] = conn
        await deliver(out)
        client_joined.set()

    host, port = parse_addr(cfg.listen)
    server, _ = await _start_server(handle, host, port)
    await servers_ready.wait()
    deadline = time.time() + cfg.register_ms / 1000
    while True:
        if cfg.clients and coord.n_mailboxes >= cfg.clients:
            break
        if not cfg.clients and time.time() >= deadline and coord.n_mailboxes:
            break
        client_joined.clear()
        try:
            await asyncio.wait_for(client_joined.wait(), 0.1)
        except asyncio.TimeoutError:
            pass
    await asyncio.sleep(0.2)  # let relays and workers absorb the last REG_INFO
    for _ in range(cfg.epochs):
        start = time.time() + cfg.lead_ms / 1000
        await deliver(coord.start_epoch(start))
        nlog.metric("epoch_start", epoch=coord.epoch, start=start)
        await sleep_until(start + cfg.schedule.epoch_ms / 1000 + cfg.schedule.processing_budget_ms / 1000 + 0.3)
        coord.end_epoch()
    await deliver(coord.shutdown())
    await asyncio.sleep(0.2)
    server.close()
    for c in conns.values():
        c.close()
    nlog.close()
    return coord


# ---------------------------------------------------------------------------
# Relay
# ---------------------------------------------------------------------------


async def _register_server(role: Role, coordinator: str, listen_host: str, port: int, nlog: NodeLog):
    coord = await connect(parse_addr(coordinator), nlog, "coordinator")
    await coord.send(Hello(role, host=listen_host, port=port))
    info = await coord.recv()
    if not isinstance(info, RegInfo):
        raise PiratesError("expected REG_INFO from the coordinator")
    return coord, info


async def run_relay(coordinator: str, listen_host: str = "127.0.0.1", out_dir: str | None = None) -> Relay:
    nlog = NodeLog("relay:?", None)
    clients: dict[str, Conn] = {}
    relay: Relay | None = None
    tasks: list[asyncio.Task] = []

    async def handle_client(reader, writer):
        conn = Conn(reader, writer, nlog)
        hello = await conn.recv()
        if not isinstance(hello, Hello):
            conn.close()
            return
        conn.peer = client_name(hello.mailbox_id)
        clients[conn.peer] = conn
        while (msg := await conn.recv()) is not None:
            try:
                if isinstance(msg, InviteSubmit):
                    relay.accept_invite(msg)
                elif isinstance(msg, SnippetSubmit):
                    relay.accept_snippet(msg)
            except PiratesError as exc:
                nlog.metric("rejected", peer=conn.peer, error=repr(exc))

    server, port = await _start_server(handle_client, listen_host, 0)
    coord, info = await _register_server(Role.RELAY, coordinator, listen_host, port, nlog)
    nlog.rename(relay_name(info.relay_index), out_dir)
    coord.log = nlog
    relay = Relay(info.relay_index)
    workers = []
    for i, addr in enumerate(info.workers):
        w = await connect(addr, nlog, worker_name(i))
        await w.send(Hello(Role.RELAY, mailbox_id=relay.index))
        workers.append(w)

    async def epoch_tasks(ann: PhaseAnnounce):
        s = ann.schedule
        await sleep_until(ann.start_time + s.d2_start / 1000)
        for ob in relay.broadcast_invites():
            for name in sorted(clients):
                await clients[name].send(ob.msg)
        for r in range(1, s.rounds + 1):
            await sleep_until(ann.start_time + s.relay_cutoff(r) / 1000)
            sent_at = time.time()
            for ob in relay.broadcast_mailboxes():
                for w in workers:
                    await w.send(ob.msg)
            nlog.metric("mailbox_broadcast", epoch=ann.epoch, round=r, ts_send=sent_at)

    while (msg := await coord.recv()) is not None:
        if isinstance(msg, RegInfo):
            relay.on_reg_info(msg)
        elif isinstance(msg, PhaseAnnounce):
            if msg.kind == Phase.SHUTDOWN:
                break
            relay.on_phase(msg)
            tasks.append(asyncio.create_task(epoch_tasks(msg)))
    for t in tasks:
        t.cancel()
    server.close()
    nlog.close()
    return relay


# ---------------------------------------------------------------------------
# Worker
# ---------------------------------------------------------------------------


async def run_worker(
    coordinator: str,
    listen_host: str = "127.0.0.1",
    out_dir: str | None = None,
    parallel: bool = True,
    throttle_ms: float = 0.0,
) -> Worker:
    nlog = NodeLog("worker:?", None)
    clients: dict[str, Conn] = {}
    worker: Worker | None = None
    answered: set[tuple[int, int]] = set()
    loop = asyncio.get_running_loop()
    lock = asyncio.Lock()

    async def answer(round_index: int, epoch: int) -> None:
        async with lock:
            if (epoch, round_index) in answered or worker.announce is None or worker.announce.epoch != epoch:
                return
            answered.add((epoch, round_index))
            out = await loop.run_in_executor(None, worker.answer_round, round_index)
            tm = worker.timings[-1]
            nlog.metric("answer", epoch=epoch, round=round_index, preprocess_s=tm.preprocess_s, reply_s=tm.reply_s)
        for ob in out:
            if ob.dest in clients:
                await clients[ob.dest].send(ob.msg)

    async def handle(reader, writer):
        conn = Conn(reader, writer, nlog)
        hello = await conn.recv()
        if not isinstance(hello, Hello):
            conn.close()
            return
        is_relay = hello.role == Role.RELAY
        conn.peer = relay_name(hello.mailbox_id) if is_relay else client_name(hello.mailbox_id)
        if not is_relay:
            clients[conn.peer] = conn
        while (msg := await conn.recv()) is not None:
            try:
                if isinstance(msg, QuerySubmit):
                    worker.store_queries(msg)
                elif isinstance(msg, MailboxBroadcast):
                    if worker.accept_mailboxes(msg):
                        asyncio.create_task(answer(msg.round, msg.epoch))
            except PiratesError as exc:
                nlog.metric("rejected", peer=conn.peer, error=repr(exc))

    server, port = await _start_server(handle, listen_host, 0)
    coord, info = await _register_server(Role.WORKER, coordinator, listen_host, port, nlog)
    nlog.rename(worker_name(info.worker_index), out_dir)
    coord.log = nlog
    worker = Worker(info.worker_index, len(info.relays), parallel, throttle_ms=throttle_ms)
    tasks: list[asyncio.Task] = []

    async def deadlines(ann: PhaseAnnounce):
        s = ann.schedule
        for r in range(1, s.rounds + 1):
            await sleep_until(ann.start_time + s.round_end(r) / 1000)
            if (ann.epoch, r) not in answered:
                nlog.metric("overrun", epoch=ann.epoch, round=r)
                await answer(r, ann.epoch)

    while (msg := await coord.recv()) is not None:
        if isinstance(msg, RegInfo):
            worker.on_reg_info(msg)
        elif isinstance(msg, BucketLists):
            worker.on_bucket_lists(msg)
        elif isinstance(msg, PhaseAnnounce):
            if msg.kind == Phase.SHUTDOWN:
                break
            worker.on_phase(msg)
            tasks.append(asyncio.create_task(deadlines(msg)))
    for t in tasks:
        t.cancel()
    server.close()
    nlog.close()
    return worker


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


@dataclass
class ClientPlan:
    public_key: bytes
    groups: list[GroupDescriptor]
    dial: str | None = None
    dial_epochs: set[int] | None = None  # None: dial in every epoch
    hangup_round: int | None = None
    epochs: int = 1
    out_dir: str | None = None
    seed: int | None = None
    dial_plan: dict[int, str] = field(default_factory=dict)  # per-epoch overrides
    hangups: dict[int, int] = field(default_factory=dict)  # epoch -> round
    offline_epochs: set[int] = field(default_factory=set)

    def intent(self, epoch: int) -> str | None:
        if epoch in self.dial_plan:
            return self.dial_plan[epoch]
        if self.dial is None:
            return None
        return self.dial if self.dial_epochs is None or epoch in self.dial_epochs else None

    def hangup(self, epoch: int) -> int | None:
        return self.hangups.get(epoch, self.hangup_round)


def _output_record(epoch: int, out: RoundOutput) -> dict:
    return {
        "epoch": epoch,
        "round": out.round,
        "timed_out": out.timed_out,
        "snippets": {str(m): p.hex() for m, p in out.snippets.items()},
    }


async def run_client(coordinator: str, plan: ClientPlan) -> list[dict]:
    nlog = NodeLog("client:?", None)
    client = Client(plan.public_key, plan.groups, np.random.default_rng(plan.seed))
    coord = await connect(parse_addr(coordinator), nlog, "coordinator")
    await coord.send(Hello(Role.CLIENT, public_key=plan.public_key))
    info = await coord.recv()
    if not isinstance(info, RegInfo):
        raise PiratesError("registration failed")
    client.on_reg_info(info)
    me = client_name(info.mailbox_id)
    nlog.rename(me, plan.out_dir)
    coord.log = nlog

    relays = []
    for i, addr in enumerate(info.relays):
        c = await connect(addr, nlog, relay_name(i))
        await c.send(Hello(Role.CLIENT, info.mailbox_id, info.auth_token, plan.public_key))
        relays.append(c)
    worker = await connect(info.workers[info.worker_index], nlog, worker_name(info.worker_index))
    await worker.send(Hello(Role.CLIENT, info.mailbox_id, info.auth_token, plan.public_key))
    own_relay = relays[info.relay_index]

    answers: dict[tuple[int, int], asyncio.Future] = {}
    invites_done: dict[int, asyncio.Event] = {}
    records: list[dict] = []
    decisions: list[dict] = []

    def answer_slot(epoch: int, r: int) -> asyncio.Future:
        return answers.setdefault((epoch, r), asyncio.get_running_loop().create_future())

    async def read_relay(conn: Conn):
        while (msg := await conn.recv()) is not None:
            if isinstance(msg, InviteBroadcast):
                client.on_invite_broadcast(msg)
                if client.broadcasts_seen >= len(relays):
                    invites_done.setdefault(msg.epoch, asyncio.Event()).set()

    async def read_worker():
        while (msg := await worker.recv()) is not None:
            if isinstance(msg, AnswerSet):
                fut = answer_slot(msg.epoch, msg.round)
                if not fut.done():
                    fut.set_result((msg, time.time()))

    readers = [asyncio.create_task(read_relay(c)) for c in relays] + [asyncio.create_task(read_worker())]

    async def run_epoch(ann: PhaseAnnounce):
        s = ann.schedule
        t0 = ann.start_time
        await sleep_until(t0 + s.d1_start / 1000)
        await own_relay.send(client.make_invite(plan.intent(ann.epoch)))
        done = invites_done.setdefault(ann.epoch, asyncio.Event())
        try:
            await asyncio.wait_for(done.wait(), max(0.0, t0 + s.d4_start / 1000 - time.time()))
        except asyncio.TimeoutError:
            nlog.metric("invites_incomplete", epoch=ann.epoch)
        await sleep_until(t0 + s.d4_start / 1000)
        await worker.send(client.make_queries())
        decision = {
            "epoch": ann.epoch,
            "group": client.decision.group.group_id if client.decision.in_call else None,
            "all_random": client.selection.all_random,
            "speaking": client.speaking,
        }
        decisions.append(decision)
        nlog.metric("decision", **decision)
        for r in range(1, s.rounds + 1):
            await sleep_until(t0 + s.round_start(r) / 1000)
            if plan.hangup(ann.epoch) == r:
                client.hangup()
            v0 = time.perf_counter()
            raw = synthetic_voice(client.mailbox_id, ann.epoch, r, s.capacity - 2)
            voice_s = time.perf_counter() - v0
            msg = client.make_snippet(r, raw)
            await own_relay.send(msg)
            nlog.metric(
                "snippet",
                epoch=ann.epoch,
                round=r,
                speaking=client.speaking,
                voice_encode_s=voice_s,
                encrypt_s=client.timings.encrypt[-1],
            )
            collectors.append(asyncio.create_task(collect(ann, r)))

    async def collect(ann: PhaseAnnounce, r: int):
        s = ann.schedule
        deadline = ann.start_time + (s.round_end(r) + s.processing_budget_ms) / 1000
        try:
            msg, _ = await asyncio.wait_for(answer_slot(ann.epoch, r), max(0.0, deadline - time.time()))
            n_dec = len(client.timings.pir_decode)
            out = client.on_answer_set(msg)
            nlog.metric(
                "round_output",
                epoch=ann.epoch,
                round=r,
                pir_decode_s=sum(client.timings.pir_decode[n_dec:]),
                decrypt_s=sum(client.timings.decrypt[n_dec:]),
                voice_decode_s=client.timings.mix[-1] if out.snippets else 0.0,
                partners=len(out.snippets),
            )
        except asyncio.TimeoutError:
            out = client.on_answer_timeout(r)
            nlog.metric("answer_timeout", epoch=ann.epoch, round=r)
        records.append(_output_record(ann.epoch, out))

    epoch_tasks: list[asyncio.Task] = []
    collectors: list[asyncio.Task] = []
    while (msg := await coord.recv()) is not None:
        if isinstance(msg, Directory):
            client.on_directory(msg)
        elif isinstance(msg, PhaseAnnounce):
            if msg.kind == Phase.SHUTDOWN:
                break
            if msg.epoch in plan.offline_epochs:
                nlog.metric("offline", epoch=msg.epoch)
                epoch_tasks.append(asyncio.create_task(asyncio.sleep(0)))
                if len(epoch_tasks) >= plan.epochs:
                    break
                continue
            try:
                client.on_phase(msg, now=time.time())
            except PhaseMissed as exc:
                nlog.metric("phase_missed", epoch=msg.epoch, error=str(exc))
                continue
            epoch_tasks.append(asyncio.create_task(run_epoch(msg)))
            if len(epoch_tasks) >= plan.epochs:
                await epoch_tasks[-1]
                await asyncio.gather(*collectors)
                break
    await asyncio.sleep(0.1)
    for t in epoch_tasks + readers:
        t.cancel()
    if plan.out_dir:
        path = Path(plan.out_dir) / f"{_file_stem(me)}.outputs.json"
        doc = {
            "mailbox_id": client.mailbox_id,
            "public_key": plan.public_key.hex(),
            "decisions": decisions,
            "rounds": sorted(records, key=lambda d: (d["epoch"], d["round"])),
        }
        path.write_text(json.dumps(doc, indent=1))
    nlog.close()
    return records
