"""Length-prefixed framing and message payload schemas.

Frame layout: 4-byte big-endian payload length, 1-byte message type, payload.
All multi-byte integers are big-endian.  Payload layouts are documented next
to each message class and in docs/protocol.md.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .config import EpochSchedule
from .crypto import HeParams
from .errors import Oversize, OversizeFrame, Truncated, UnknownType
from .pir import PirAnswer, PirQuery

HEADER = struct.Struct(">IB")
HEADER_SIZE = HEADER.size
MAX_FRAME = 1 << 30


class MessageType(enum.IntEnum):
    HELLO = 1
    REG_INFO = 2
    PHASE_ANNOUNCE = 3
    INVITE_SUBMIT = 4
    INVITE_BROADCAST = 5
    QUERY_SUBMIT = 6
    SNIPPET_SUBMIT = 7
    MAILBOX_BROADCAST = 8
    ANSWER_SET = 9
    BUCKET_LISTS = 10
    DIRECTORY = 11


PHASE_OF = {
    MessageType.HELLO: "registration",
    MessageType.REG_INFO: "registration",
    MessageType.PHASE_ANNOUNCE: "mapping",
    MessageType.BUCKET_LISTS: "mapping",
    MessageType.DIRECTORY: "mapping",
    MessageType.INVITE_SUBMIT: "dialing",
    MessageType.INVITE_BROADCAST: "dialing",
    MessageType.QUERY_SUBMIT: "dialing",
    MessageType.SNIPPET_SUBMIT: "communication",
    MessageType.MAILBOX_BROADCAST: "communication",
    MessageType.ANSWER_SET: "communication",
}


@dataclass(frozen=True)
class Frame:
    msg_type: MessageType
    payload: bytes


def encode_frame(msg_type: int, payload: bytes, max_size: int = MAX_FRAME) -> bytes:
    if len(payload) > max_size:
        raise OversizeFrame(f"payload of {len(payload)} bytes exceeds {max_size}")
    return HEADER.pack(len(payload), int(msg_type)) + payload


def decode_frame(stream: bytes, offset: int = 0, max_size: int = MAX_FRAME) -> tuple[Frame, int]:
    """Decode one frame starting at ``offset``; returns it and the bytes consumed."""
    if len(stream) - offset < HEADER_SIZE:
        raise Truncated("incomplete frame header")
    length, raw_type = HEADER.unpack_from(stream, offset)
    if length > max_size:
        raise OversizeFrame(f"frame announces {length} bytes, limit {max_size}")
    try:
        msg_type = MessageType(raw_type)
    except ValueError:
        raise UnknownType(f"unknown message type {raw_type}") from None
    end = offset + HEADER_SIZE + length
    if len(stream) < end:
        raise Truncated(f"frame needs {length} payload bytes, {len(stream) - offset - HEADER_SIZE} available")
    return Frame(msg_type, bytes(stream[offset + HEADER_SIZE : end])), HEADER_SIZE + length


def decode_frames(stream: bytes, max_size: int = MAX_FRAME) -> list[Frame]:
    frames, pos = [], 0
    while pos < len(stream):
        frame, used = decode_frame(stream, pos, max_size)
        frames.append(frame)
        pos += used
    return frames


class FrameDecoder:
    """Incremental decoder; one per connection."""

    def __init__(self, max_size: int = MAX_FRAME):
        self._buf = bytearray()
        self.max_size = max_size

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        out = []
        while True:
            try:
                frame, used = decode_frame(self._buf, 0, self.max_size)
            except Truncated:
                return out
            del self._buf[:used]
            out.append(frame)

    @property
    def pending(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------------------
# Snippet padding
# ---------------------------------------------------------------------------


def pad_snippet(raw: bytes, capacity: int) -> bytes:
    """Fixed-size payload: 2-byte length prefix, raw bytes, zero fill."""
    if len(raw) > capacity - 2:
        raise Oversize(f"{len(raw)} bytes does not fit capacity {capacity}")
    return len(raw).to_bytes(2, "big") + raw + bytes(capacity - 2 - len(raw))


def unpad_snippet(payload: bytes) -> bytes:
    n = int.from_bytes(payload[:2], "big")
    if n > len(payload) - 2:
        raise Oversize("length prefix exceeds payload")
    return payload[2 : 2 + n]


# ---------------------------------------------------------------------------
# Payload schemas
# ---------------------------------------------------------------------------

Addr = tuple[str, int]


class Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        s = struct.Struct(">" + fmt)
        if self.pos + s.size > len(self.buf):
            raise Truncated("payload too short")
        vals = s.unpack_from(self.buf, self.pos)
        self.pos += s.size
        return vals if len(vals) > 1 else vals[0]

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncated("payload too short")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return bytes(out)

    def text(self) -> str:
        return self.raw(self.take("B")).decode()

    def addrs(self) -> list[Addr]:
        return [(self.text(), self.take("H")) for _ in range(self.take("H"))]

    def done(self):
        if self.pos != len(self.buf):
            raise ValueError(f"{len(self.buf) - self.pos} trailing payload bytes")


def _text(s: str) -> bytes:
    b = s.encode()
    return struct.pack(">B", len(b)) + b


def _addrs(addrs) -> bytes:
    return struct.pack(">H", len(addrs)) + b"".join(_text(h) + struct.pack(">H", p) for h, p in addrs)


class Role(enum.IntEnum):
    CLIENT = 1
    RELAY = 2
    WORKER = 3


@dataclass
class Hello:
    """role u8 | mailbox_id u32 | token 16B | public_key 32B | host str8 | port u16"""

    TYPE = MessageType.HELLO
    role: Role
    mailbox_id: int = 0
    token: bytes = bytes(16)
    public_key: bytes = bytes(32)
    host: str = ""
    port: int = 0

    def to_bytes(self) -> bytes:
        return (
            struct.pack(">BI", self.role, self.mailbox_id)
            + self.token
            + self.public_key
            + _text(self.host)
            + struct.pack(">H", self.port)
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> Hello:
        r = Reader(buf)
        role, mailbox = r.take("BI")
        out = cls(Role(role), mailbox, r.raw(16), r.raw(32), r.text(), r.take("H"))
        r.done()
        return out


@dataclass
class RegInfo:
    """mailbox_id u32 | token 16B | relay u16 | worker u16 | N u32 | relays addrs | workers addrs

    Addresses: count u16, then (host str8, port u16) each.
    """

    TYPE = MessageType.REG_INFO
    mailbox_id: int
    auth_token: bytes
    relay_index: int
    worker_index: int
    n_mailboxes: int
    relays: list[Addr] = field(default_factory=list)
    workers: list[Addr] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        return (
            struct.pack(">I", self.mailbox_id)
            + self.auth_token
            + struct.pack(">HHI", self.relay_index, self.worker_index, self.n_mailboxes)
            + _addrs(self.relays)
            + _addrs(self.workers)
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> RegInfo:
        r = Reader(buf)
        mailbox = r.take("I")
        token = r.raw(16)
        relay, worker, n = r.take("HHI")
        out = cls(mailbox, token, relay, worker, n, r.addrs(), r.addrs())
        r.done()
        return out


class Phase(enum.IntEnum):
    EPOCH = 1
    SHUTDOWN = 2


_SCHEDULE_FIELDS = (
    "rounds",
    "round_ms",
    "snippet_ms",
    "mapping_ms",
    "d1_ms",
    "d2_ms",
    "d3_ms",
    "d4_ms",
    "processing_budget_ms",
    "bitrate_bps",
)


@dataclass
class PhaseAnnounce:
    """kind u8 | epoch u64 | seed 16B | N u32 | B u16 | simulated_users u32 | start f64
    | schedule 10 x u32 | he n u16 | he log_q u8 | he t u8
    """

    TYPE = MessageType.PHASE_ANNOUNCE
    kind: Phase
    epoch: int
    seed: bytes
    n_mailboxes: int
    n_buckets: int
    schedule: EpochSchedule
    start_time: float = 0.0
    simulated_users: int = 0
    he_params: HeParams = field(default_factory=HeParams)

    def to_bytes(self) -> bytes:
        sched = [getattr(self.schedule, f) for f in _SCHEDULE_FIELDS]
        p = self.he_params
        return (
            struct.pack(">BQ", self.kind, self.epoch)
            + self.seed
            + struct.pack(">IHId", self.n_mailboxes, self.n_buckets, self.simulated_users, self.start_time)
            + struct.pack(">" + "I" * len(sched), *sched)
            + struct.pack(">HBB", p.n, p.log_q, p.t)
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> PhaseAnnounce:
        r = Reader(buf)
        kind, epoch = r.take("BQ")
        seed = r.raw(16)
        n, b, sim, start = r.take("IHId")
        sched = EpochSchedule(**dict(zip(_SCHEDULE_FIELDS, r.take("I" * len(_SCHEDULE_FIELDS)))))
        he_n, log_q, t = r.take("HBB")
        r.done()
        return cls(Phase(kind), epoch, seed, n, b, sched, start, sim, HeParams(n=he_n, q=1 << log_q, t=t))


@dataclass
class Directory:
    """count u32 | (public_key 32B, mailbox_id u32) * count"""

    TYPE = MessageType.DIRECTORY
    entries: dict[bytes, int]

    def to_bytes(self) -> bytes:
        items = sorted(self.entries.items(), key=lambda kv: kv[1])
        return struct.pack(">I", len(items)) + b"".join(pk + struct.pack(">I", m) for pk, m in items)

    @classmethod
    def from_bytes(cls, buf: bytes) -> Directory:
        r = Reader(buf)
        entries = {}
        for _ in range(r.take("I")):
            pk = r.raw(32)
            entries[pk] = r.take("I")
        r.done()
        return cls(entries)


@dataclass
class BucketLists:
    """epoch u64 | B u16 | per bucket: count u32, mailbox ids u32 * count"""

    TYPE = MessageType.BUCKET_LISTS
    epoch: int
    lists: list[list[int]]

    def to_bytes(self) -> bytes:
        parts = [struct.pack(">QH", self.epoch, len(self.lists))]
        for lst in self.lists:
            parts.append(struct.pack(f">I{len(lst)}I", len(lst), *lst))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> BucketLists:
        r = Reader(buf)
        epoch, nb = r.take("QH")
        lists = []
        for _ in range(nb):
            count = r.take("I")
            lists.append(list(r.take("I" * count)) if count > 1 else ([r.take("I")] if count else []))
        r.done()
        return cls(epoch, lists)


@dataclass
class InviteSubmit:
    """mailbox_id u32 | token 16B | epoch u64 | invite 32B"""

    TYPE = MessageType.INVITE_SUBMIT
    mailbox_id: int
    token: bytes
    epoch: int
    invite: bytes

    def to_bytes(self) -> bytes:
        return struct.pack(">I", self.mailbox_id) + self.token + struct.pack(">Q", self.epoch) + self.invite

    @classmethod
    def from_bytes(cls, buf: bytes) -> InviteSubmit:
        r = Reader(buf)
        mailbox = r.take("I")
        token = r.raw(16)
        epoch = r.take("Q")
        out = cls(mailbox, token, epoch, r.raw(32))
        r.done()
        return out


@dataclass
class InviteBroadcast:
    """epoch u64 | relay u16 | count u32 | invites 32B * count (ascending mailbox order)"""

    TYPE = MessageType.INVITE_BROADCAST
    epoch: int
    relay_index: int
    invites: list[bytes]

    def to_bytes(self) -> bytes:
        return struct.pack(">QHI", self.epoch, self.relay_index, len(self.invites)) + b"".join(self.invites)

    @classmethod
    def from_bytes(cls, buf: bytes) -> InviteBroadcast:
        r = Reader(buf)
        epoch, relay, count = r.take("QHI")
        out = cls(epoch, relay, [r.raw(32) for _ in range(count)])
        r.done()
        return out


def _he_header(p: HeParams) -> bytes:
    return struct.pack(">HBB", p.n, p.log_q, p.t)


def _read_he(r: Reader) -> HeParams:
    n, log_q, t = r.take("HBB")
    return HeParams(n=n, q=1 << log_q, t=t)


@dataclass
class QuerySubmit:
    """client_tag u32 | epoch u64 | he n u16, log_q u8, t u8 | count u16 | queries

    Each query: client_tag u32, bucket u16, n_items u32, coeff width u8, then
    n_items ciphertexts of (n+1) little-endian coefficients of that width.
    """

    TYPE = MessageType.QUERY_SUBMIT
    client_tag: int
    epoch: int
    queries: list[PirQuery]

    def to_bytes(self) -> bytes:
        p = self.queries[0].selection.params if self.queries else HeParams()
        return (
            struct.pack(">IQ", self.client_tag, self.epoch)
            + _he_header(p)
            + struct.pack(">H", len(self.queries))
            + b"".join(q.to_bytes() for q in self.queries)
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> QuerySubmit:
        r = Reader(buf)
        tag, epoch = r.take("IQ")
        params = _read_he(r)
        queries, pos = [], None
        count = r.take("H")
        pos = r.pos
        for _ in range(count):
            q, pos = PirQuery.from_bytes(params, buf, pos)
            queries.append(q)
        if pos != len(buf):
            raise ValueError("trailing bytes after queries")
        return cls(tag, epoch, queries)


@dataclass
class SnippetSubmit:
    """mailbox_id u32 | token 16B | epoch u64 | round u32 | length u16 | ciphertext"""

    TYPE = MessageType.SNIPPET_SUBMIT
    mailbox_id: int
    token: bytes
    epoch: int
    round: int
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return (
            struct.pack(">I", self.mailbox_id)
            + self.token
            + struct.pack(">QIH", self.epoch, self.round, len(self.ciphertext))
            + self.ciphertext
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> SnippetSubmit:
        r = Reader(buf)
        mailbox = r.take("I")
        token = r.raw(16)
        epoch, rnd, n = r.take("QIH")
        out = cls(mailbox, token, epoch, rnd, r.raw(n))
        r.done()
        return out


@dataclass
class MailboxBroadcast:
    """epoch u64 | round u32 | relay u16 | count u32 | record size u16 | (mailbox u32, record) * count"""

    TYPE = MessageType.MAILBOX_BROADCAST
    epoch: int
    round: int
    relay_index: int
    records: dict[int, bytes]
    record_size: int

    def to_bytes(self) -> bytes:
        head = struct.pack(">QIHIH", self.epoch, self.round, self.relay_index, len(self.records), self.record_size)
        body = b"".join(struct.pack(">I", m) + self.records[m] for m in sorted(self.records))
        return head + body

    @classmethod
    def from_bytes(cls, buf: bytes) -> MailboxBroadcast:
        r = Reader(buf)
        epoch, rnd, relay, count, size = r.take("QIHIH")
        records = {}
        for _ in range(count):
            m = r.take("I")
            records[m] = r.raw(size)
        r.done()
        return cls(epoch, rnd, relay, records, size)


@dataclass
class AnswerSet:
    """client_tag u32 | epoch u64 | round u32 | he n u16, log_q u8, t u8 | count u16 | answers

    Each answer: client_tag u32, bucket u16, n_limbs u32, coeff width u8, then
    n_limbs ciphertexts.
    """

    TYPE = MessageType.ANSWER_SET
    client_tag: int
    epoch: int
    round: int
    answers: list[PirAnswer]

    def to_bytes(self) -> bytes:
        p = self.answers[0].limbs.params if self.answers else HeParams()
        return (
            struct.pack(">IQI", self.client_tag, self.epoch, self.round)
            + _he_header(p)
            + struct.pack(">H", len(self.answers))
            + b"".join(a.to_bytes() for a in self.answers)
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> AnswerSet:
        r = Reader(buf)
        tag, epoch, rnd = r.take("IQI")
        params = _read_he(r)
        count = r.take("H")
        pos = r.pos
        answers = []
        for _ in range(count):
            a, pos = PirAnswer.from_bytes(params, buf, pos)
            answers.append(a)
        if pos != len(buf):
            raise ValueError("trailing bytes after answers")
        return cls(tag, epoch, rnd, answers)


MESSAGE_CLASSES = {
    cls.TYPE: cls
    for cls in (
        Hello,
        RegInfo,
        PhaseAnnounce,
        Directory,
        BucketLists,
        InviteSubmit,
        InviteBroadcast,
        QuerySubmit,
        SnippetSubmit,
        MailboxBroadcast,
        AnswerSet,
    )
}


def encode_message(msg) -> bytes:
    return encode_frame(msg.TYPE, msg.to_bytes())


def parse_payload(msg_type: MessageType, payload: bytes):
    return MESSAGE_CLASSES[MessageType(msg_type)].from_bytes(payload)
