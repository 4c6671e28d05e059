"""What each server observes: one event per frame sent or received."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .wire import PHASE_OF, MessageType

SERVER_PREFIXES = ("coordinator", "relay:", "worker:")


@dataclass(frozen=True)
class Event:
    node: str
    direction: str  # "in" or "out"
    peer: str
    msg_type: int
    size: int  # full frame length in bytes
    epoch: int = 0
    round: int = 0
    ts: float = 0.0

    @property
    def phase(self) -> str:
        return PHASE_OF[MessageType(self.msg_type)]


@dataclass
class Transcript:
    events: list[Event] = field(default_factory=list)

    def record(self, event: Event) -> None:
        self.events.append(event)

    def extend(self, other: Transcript) -> None:
        self.events.extend(other.events)

    def nodes(self) -> list[str]:
        return sorted({e.node for e in self.events})

    def server_nodes(self) -> list[str]:
        return [n for n in self.nodes() if n.startswith(SERVER_PREFIXES)]

    def shape(self, node: str) -> dict[str, Counter]:
        """Per phase, the multiset of (direction, msg_type, size) seen at ``node``."""
        out: dict[str, Counter] = {}
        for e in self.events:
            if e.node == node:
                out.setdefault(e.phase, Counter())[(e.direction, e.msg_type, e.size)] += 1
        return out

    def server_shapes(self) -> dict[str, dict[str, Counter]]:
        return {n: self.shape(n) for n in self.server_nodes()}

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for e in self.events:
                fh.write(json.dumps(asdict(e)) + "\n")

    @classmethod
    def load(cls, *paths: str | Path) -> Transcript:
        t = cls()
        for p in paths:
            with open(p) as fh:
                t.events.extend(Event(**json.loads(line)) for line in fh if line.strip())
        t.events.sort(key=lambda e: e.ts)
        return t


def shape_diff(a: Transcript, b: Transcript) -> list[str]:
    """Human-readable differences between two runs' server-side shapes; empty if equal."""
    diffs = []
    sa, sb = a.server_shapes(), b.server_shapes()
    for node in sorted(set(sa) | set(sb)):
        pa, pb = sa.get(node, {}), sb.get(node, {})
        for phase in sorted(set(pa) | set(pb)):
            ca, cb = pa.get(phase, Counter()), pb.get(phase, Counter())
            if ca != cb:
                diffs.append(f"{node}/{phase}: {dict(ca - cb)} vs {dict(cb - ca)}")
    return diffs
