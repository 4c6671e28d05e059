"""Scenario files: who exists, who belongs to which group, who dials when.

Format (``#`` starts a comment)::

    [config]
    epochs = 2
    rounds = 5
    round_ms = 400
    snippet_ms = 250
    relays = 1
    workers = 1
    simulated_users = 0
    seed = 7

    [groups]
    g1 = alice bob carol
    g2 = carol dave gmk=00112233...      # optional explicit 32-byte key

    [clients]
    alice bob carol dave eve

    [epochs]
    1 dial alice g1
    1 hangup bob 3
    2 offline eve

Keys and group secrets not given explicitly are derived from ``seed`` so a
scenario file fully determines a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from ..config import EpochSchedule
from ..crypto import HeParams, hash
from ..dialing import GroupDescriptor

CONFIG_KEYS = {
    "epochs": int,
    "rounds": int,
    "round_ms": int,
    "snippet_ms": int,
    "phase_ms": int,
    "processing_budget_ms": int,
    "relays": int,
    "workers": int,
    "simulated_users": int,
    "seed": int,
    "group_size": int,
    "he_n": int,
    "throttle_ms": float,
}


@dataclass
class Scenario:
    name: str = "scenario"
    clients: list[str] = field(default_factory=list)
    groups: dict[str, list[str]] = field(default_factory=dict)
    gmks: dict[str, bytes] = field(default_factory=dict)
    intents: dict[int, dict[str, str]] = field(default_factory=dict)  # epoch -> client -> group
    hangups: dict[int, dict[str, int]] = field(default_factory=dict)  # epoch -> client -> round
    offline: dict[int, set[str]] = field(default_factory=dict)
    epochs: int = 1
    rounds: int = 10
    round_ms: int = 250
    snippet_ms: int = 250
    phase_ms: int = 150
    processing_budget_ms: int | None = None
    relays: int = 1
    workers: int = 1
    simulated_users: int = 0
    seed: int = 0
    group_size: int | None = None
    he_n: int = HeParams.n
    throttle_ms: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        known = set(self.clients)
        if len(known) != len(self.clients):
            raise ValueError("duplicate client names")
        for gid, members in self.groups.items():
            if len(members) < 2:
                raise ValueError(f"group {gid} needs at least two members")
            if not set(members) <= known:
                raise ValueError(f"group {gid} has undeclared members {set(members) - known}")
        for e, intents in self.intents.items():
            for c, gid in intents.items():
                if gid not in self.groups:
                    raise ValueError(f"epoch {e}: {c} dials undeclared group {gid}")
                if c not in self.groups[gid]:
                    raise ValueError(f"epoch {e}: {c} is not a member of {gid}")
        for e, hs in self.hangups.items():
            if not set(hs) <= known:
                raise ValueError(f"epoch {e}: hang-up by undeclared client")
        for e, off in self.offline.items():
            if not off <= known:
                raise ValueError(f"epoch {e}: undeclared offline client")

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def G(self) -> int:
        if self.group_size is not None:
            return self.group_size
        return max([len(m) for m in self.groups.values()] + [2])

    @property
    def schedule(self) -> EpochSchedule:
        budget = self.processing_budget_ms
        if budget is None:
            budget = (self.round_ms * 2) // 5
        p = self.phase_ms
        return EpochSchedule(self.rounds, self.round_ms, self.snippet_ms, p, p, p, p, p, budget)

    @property
    def he_params(self) -> HeParams:
        return HeParams(n=self.he_n)

    def public_key(self, client: str) -> bytes:
        return hash(b"pk|" + self.seed.to_bytes(8, "big") + client.encode())

    def gmk(self, gid: str) -> bytes:
        if gid in self.gmks:
            return self.gmks[gid]
        return hash(b"gmk|" + self.seed.to_bytes(8, "big") + gid.encode())

    def descriptors(self) -> list[GroupDescriptor]:
        return [
            GroupDescriptor(gid, self.gmk(gid), tuple(self.public_key(c) for c in members))
            for gid, members in self.groups.items()
        ]

    def intent(self, epoch: int, client: str) -> str | None:
        return self.intents.get(epoch, {}).get(client)

    def with_(self, **changes) -> Scenario:
        return replace(self, **changes)


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    section = None
    kw: dict = {"clients": [], "groups": {}, "gmks": {}, "intents": {}, "hangups": {}, "offline": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("config", "groups", "clients", "epochs"):
                raise ValueError(f"line {lineno}: unknown section [{section}]")
            continue
        if section == "config":
            key, _, val = (s.strip() for s in line.partition("="))
            if key not in CONFIG_KEYS:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            kw[key] = CONFIG_KEYS[key](val)
        elif section == "groups":
            gid, _, rest = (s.strip() for s in line.partition("="))
            members = []
            for tok in rest.split():
                if tok.startswith("gmk="):
                    kw["gmks"][gid] = bytes.fromhex(tok[4:])
                else:
                    members.append(tok)
            kw["groups"][gid] = members
        elif section == "clients":
            kw["clients"].extend(line.split())
        elif section == "epochs":
            parts = line.split()
            if len(parts) < 3:
                raise ValueError(f"line {lineno}: expected '<epoch> <action> <client> ...'")
            e, action, client = int(parts[0]), parts[1], parts[2]
            if action == "dial" and len(parts) == 4:
                slot = kw["intents"].setdefault(e, {})
                if client in slot:
                    raise ValueError(f"line {lineno}: {client} already dials in epoch {e}")
                slot[client] = parts[3]
            elif action == "hangup" and len(parts) == 4:
                kw["hangups"].setdefault(e, {})[client] = int(parts[3])
            elif action == "offline" and len(parts) == 3:
                kw["offline"].setdefault(e, set()).add(client)
            else:
                raise ValueError(f"line {lineno}: cannot parse {line!r}")
        else:
            raise ValueError(f"line {lineno}: content outside a section")
    return Scenario(name=name, **kw)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    return parse_scenario(p.read_text(), p.stem)


def format_scenario(s: Scenario) -> str:
    lines = ["[config]"]
    for key in CONFIG_KEYS:
        val = getattr(s, key)
        if val is not None:
            lines.append(f"{key} = {val}")
    lines.append("\n[groups]")
    for gid, members in s.groups.items():
        extra = f" gmk={s.gmks[gid].hex()}" if gid in s.gmks else ""
        lines.append(f"{gid} = {' '.join(members)}{extra}")
    lines.append("\n[clients]")
    lines.append(" ".join(s.clients))
    lines.append("\n[epochs]")
    for e in sorted(set(s.intents) | set(s.hangups) | set(s.offline)):
        for c, g in sorted(s.intents.get(e, {}).items()):
            lines.append(f"{e} dial {c} {g}")
        for c, r in sorted(s.hangups.get(e, {}).items()):
            lines.append(f"{e} hangup {c} {r}")
        for c in sorted(s.offline.get(e, set())):
            lines.append(f"{e} offline {c}")
    return "\n".join(lines) + "\n"
