"""Run scenarios in-process or as a set of OS processes and collect the artifacts."""

from __future__ import annotations

import json
import socket
import subprocess
import sys
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..cli import write_group_file
from ..client import RoundOutput, synthetic_voice
from ..errors import DeadlineOverrun, NoFeasible, SpawnFailure
from ..local import LocalDeployment
from ..transcript import Transcript
from ..wire import MessageType
from .latency import LatencyBreakdown
from .scenario import Scenario

MODES = ("local", "process")


@dataclass
class Decision:
    group: str | None
    all_random: bool
    speaking: bool


@dataclass
class ScenarioResult:
    scenario: Scenario
    transcript: Transcript
    mailbox: dict[str, int]  # client name -> mailbox id
    outputs: dict[int, dict[str, list[RoundOutput]]] = field(default_factory=dict)  # epoch -> client -> rounds
    decisions: dict[int, dict[str, Decision]] = field(default_factory=dict)
    breakdown: LatencyBreakdown | None = None
    worker_ms: list[float] = field(default_factory=list)  # processing time per worker round
    overruns: int = 0
    rejected: list[str] = field(default_factory=list)

    @property
    def fallbacks(self) -> int:
        return sum(d.all_random for per in self.decisions.values() for d in per.values())


@dataclass
class DeliveryReport:
    expected: int = 0
    delivered: int = 0
    wrong: int = 0
    spurious: int = 0
    missing: list[tuple[int, str, int, str]] = field(default_factory=list)  # (epoch, receiver, round, sender)

    @property
    def ok(self) -> bool:
        return self.delivered == self.expected and not self.wrong and not self.spurious


def check_deliveries(res: ScenarioResult) -> DeliveryReport:
    """Compare every client's round outputs against what the call decisions imply.

    A receiver must hold a partner's exact payload in round r iff both chose
    the same group, both could match their targets, both are online and
    neither had hung up by round r.
    """
    s = res.scenario
    cap = s.schedule.capacity
    rep = DeliveryReport()
    for e, per in res.decisions.items():
        offline = s.offline.get(e, set())
        hang = s.hangups.get(e, {})
        for recv, d in per.items():
            outs = res.outputs[e][recv]
            for r in range(1, s.rounds + 1):
                got = outs[r - 1].snippets if r - 1 < len(outs) else {}
                expect = {}
                listening = d.group and not d.all_random and recv not in offline and hang.get(recv, 10**9) > r
                if listening:
                    for sender in s.groups[d.group]:
                        sd = per.get(sender)
                        if sender == recv or sd is None or sender in offline:
                            continue
                        if sd.group == d.group and not sd.all_random and hang.get(sender, 10**9) > r:
                            m = res.mailbox[sender]
                            expect[m] = (sender, synthetic_voice(m, e, r, cap - 2))
                for m, (sender, payload) in expect.items():
                    rep.expected += 1
                    if got.get(m) == payload:
                        rep.delivered += 1
                    else:
                        rep.missing.append((e, recv, r, sender))
                        if m in got:
                            rep.wrong += 1
                rep.spurious += len(set(got) - set(expect))
    return rep


# ---------------------------------------------------------------------------
# In-process runs
# ---------------------------------------------------------------------------


def _ms(xs) -> float:
    return 1000 * float(np.mean(xs)) if len(xs) else 0.0


def run_local(s: Scenario, worker_parallel: bool = False) -> ScenarioResult:
    dep = LocalDeployment(
        s.relays,
        s.workers,
        s.G,
        s.schedule,
        s.simulated_users,
        s.he_params,
        seed=s.seed,
        worker_parallel=worker_parallel,
        throttle_ms=s.throttle_ms,
    )
    descriptors = s.descriptors()
    for name in s.clients:
        dep.add_client(s.public_key(name), descriptors)
    mailbox = {name: dep.by_key[s.public_key(name)].mailbox_id for name in s.clients}
    res = ScenarioResult(s, dep.transcript, mailbox)
    voice_s: list[float] = []

    def voice(sender, epoch, r, size):
        t0 = time.perf_counter()
        out = synthetic_voice(sender, epoch, r, size)
        voice_s.append(time.perf_counter() - t0)
        return out

    by_id = {m: n for n, m in mailbox.items()}
    for e in range(1, s.epochs + 1):
        intents = {s.public_key(c): g for c, g in s.intents.get(e, {}).items()}
        hangups = {s.public_key(c): r for c, r in s.hangups.get(e, {}).items()}
        silent = {s.public_key(c) for c in s.offline.get(e, set())}
        er = dep.run_epoch(intents, hangups, silent, voice)
        res.outputs[e] = {by_id[m]: outs for m, outs in er.outputs.items()}
        res.decisions[e] = {
            by_id[m]: Decision(er.in_call[m], er.all_random[m], er.speaking[m]) for m in er.outputs
        }
        res.rejected.extend(er.rejected)
    timings = [t for w in dep.workers for t in w.timings]
    res.worker_ms = [1000 * (t.preprocess_s + t.reply_s) for t in timings]
    res.overruns = sum(w.overruns for w in dep.workers)

    speakers = [c for c in dep.clients.values() if c.timings.decrypt]
    parts = {
        "voice_encode": _ms(voice_s),
        "encrypt": _ms([x for c in dep.clients.values() for x in c.timings.encrypt]),
        "c_to_r": dep.transfer_ms(MessageType.SNIPPET_SUBMIT),
        "r_to_w": dep.transfer_ms(MessageType.MAILBOX_BROADCAST),
        "preprocess": _ms([t.preprocess_s for t in timings]),
        "pir_reply": _ms([t.reply_s for t in timings]),
        "w_to_c": dep.transfer_ms(MessageType.ANSWER_SET),
        # per round a listener decodes one answer per partner
        "pir_decode": _ms([sum(c.timings.pir_decode) / max(1, len(c.timings.mix)) for c in speakers]),
        "decrypt": _ms([sum(c.timings.decrypt) / max(1, len(c.timings.mix)) for c in speakers]),
        "voice_decode": _ms([x for c in speakers for x in c.timings.mix]),
    }
    res.breakdown = LatencyBreakdown.from_parts(parts, s.snippet_ms)
    return res


# ---------------------------------------------------------------------------
# Multi-process runs
# ---------------------------------------------------------------------------


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def _role_cmd(role: str, *args) -> list[str]:
    return [sys.executable, "-m", "pirates.cli", role, *map(str, args)]


def _read_jsonl(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_processes(s: Scenario, out_dir: str | Path, timeout_s: float | None = None) -> ScenarioResult:
    """Spawn coordinator, relays, workers and clients as separate OS processes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for old in list(out.glob("*.jsonl")) + list(out.glob("*.outputs.json")):
        old.unlink()
    group_file = out / "groups.txt"
    write_group_file(str(group_file), s.descriptors())
    addr = f"127.0.0.1:{free_port()}"
    sched = s.schedule
    lead_ms = 1500 + 150 * s.n_clients
    procs: list[tuple[str, subprocess.Popen]] = []
    stderr = open(out / "stderr.log", "w")

    def spawn(name: str, cmd: list[str]) -> None:
        try:
            procs.append((name, subprocess.Popen(cmd, stdout=stderr, stderr=stderr)))
        except OSError as exc:
            raise SpawnFailure(f"{name}: {exc}") from exc

    spawn(
        "coordinator",
        _role_cmd(
            "coordinator", "--listen", addr, "--relays", s.relays, "--workers", s.workers, "--group-size", s.G,
            "--rounds", s.rounds, "--round-ms", s.round_ms, "--snippet-ms", s.snippet_ms, "--phase-ms", s.phase_ms,
            "--processing-budget-ms", sched.processing_budget_ms, "--epochs", s.epochs, "--clients", s.n_clients,
            "--lead-ms", lead_ms, "--simulated-users", s.simulated_users, "--he-n", s.he_n, "--seed", s.seed,
            "--out", out,
        ),
    )
    for i in range(s.relays):
        spawn(f"relay{i}", _role_cmd("relay", "--coordinator", addr, "--out", out))
    for i in range(s.workers):
        extra = ["--throttle-ms", s.throttle_ms] if s.throttle_ms else []
        spawn(f"worker{i}", _role_cmd("worker", "--coordinator", addr, "--out", out, *extra))
    for k, name in enumerate(s.clients):
        args = ["--coordinator", addr, "--group-file", group_file, "--scripted", "--epochs", s.epochs]
        args += ["--public-key", s.public_key(name).hex(), "--seed", s.seed * 1000 + k, "--out", out]
        for e in range(1, s.epochs + 1):
            if (g := s.intent(e, name)) is not None:
                args += ["--dial-plan", f"{e}:{g}"]
            if (r := s.hangups.get(e, {}).get(name)) is not None:
                args += ["--hangup", f"{e}:{r}"]
        off = [e for e, names in s.offline.items() if name in names]
        if off:
            args += ["--offline-epochs", ",".join(map(str, off))]
        spawn(name, _role_cmd("client", *args))

    budget = timeout_s or (30 + s.epochs * (lead_ms + sched.epoch_ms + 1500) / 1000)
    deadline = time.time() + budget
    failed = []
    for name, p in procs:
        try:
            rc = p.wait(max(0.1, deadline - time.time()))
        except subprocess.TimeoutExpired:
            p.kill()
            rc = "timeout"
        if rc != 0:
            failed.append(f"{name}: {rc}")
    stderr.close()
    if failed:
        raise SpawnFailure("processes failed: " + ", ".join(failed) + f" (see {out / 'stderr.log'})")
    return collect_process_run(s, out)


def collect_process_run(s: Scenario, out: Path) -> ScenarioResult:
    transcript = Transcript.load(*sorted(out.glob("*.events.jsonl")))
    metrics = [m for p in sorted(out.glob("*.metrics.jsonl")) for m in _read_jsonl(p)]
    name_of = {s.public_key(n).hex(): n for n in s.clients}
    mailbox, res_outputs, res_decisions = {}, defaultdict(dict), defaultdict(dict)
    for p in sorted(out.glob("*.outputs.json")):
        doc = json.loads(p.read_text())
        name = name_of[doc["public_key"]]
        mailbox[name] = doc["mailbox_id"]
        for d in doc["decisions"]:
            res_decisions[d["epoch"]][name] = Decision(d["group"], d["all_random"], d["speaking"])
        by_epoch = defaultdict(list)
        for r in doc["rounds"]:
            snippets = {int(m): bytes.fromhex(h) for m, h in r["snippets"].items()}
            by_epoch[r["epoch"]].append(RoundOutput(r["round"], snippets, timed_out=r["timed_out"]))
        for e in range(1, s.epochs + 1):
            res_outputs[e][name] = by_epoch.get(e, [])
    res = ScenarioResult(s, transcript, mailbox, dict(res_outputs), dict(res_decisions))
    answers = [m for m in metrics if m["name"] == "answer"]
    res.worker_ms = [1000 * (m["preprocess_s"] + m["reply_s"]) for m in answers]
    res.overruns = sum(m["name"] == "overrun" for m in metrics)
    res.rejected = [m["error"] for m in metrics if m["name"] == "rejected"]
    res.breakdown = process_breakdown(s, transcript, metrics)
    return res


def _hops(transcript: Transcript, msg_type: MessageType) -> list[float]:
    """Sender-to-receiver delays for every frame of ``msg_type`` (same-host clocks)."""
    sent = {}
    for e in transcript.events:
        if e.msg_type == msg_type and e.direction == "out":
            sent[(e.node, e.peer, e.epoch, e.round)] = e.ts
    delays = []
    for e in transcript.events:
        if e.msg_type == msg_type and e.direction == "in":
            t = sent.get((e.peer, e.node, e.epoch, e.round))
            if t is not None:
                delays.append(e.ts - t)
    return delays


def process_breakdown(s: Scenario, transcript: Transcript, metrics: list[dict]) -> LatencyBreakdown:
    def pick(name, key, cond=lambda m: True):
        return [m[key] for m in metrics if m["name"] == name and cond(m)]

    listening = lambda m: m.get("partners", 0) > 0  # noqa: E731
    parts = {
        "voice_encode": _ms(pick("snippet", "voice_encode_s", lambda m: m["speaking"])),
        "encrypt": _ms(pick("snippet", "encrypt_s", lambda m: m["speaking"])),
        "c_to_r": _ms(_hops(transcript, MessageType.SNIPPET_SUBMIT)),
        "r_to_w": _ms(_hops(transcript, MessageType.MAILBOX_BROADCAST)),
        "preprocess": _ms(pick("answer", "preprocess_s")),
        "pir_reply": _ms(pick("answer", "reply_s")),
        "w_to_c": _ms(_hops(transcript, MessageType.ANSWER_SET)),
        "pir_decode": _ms(pick("round_output", "pir_decode_s", listening)),
        "decrypt": _ms(pick("round_output", "decrypt_s", listening)),
        "voice_decode": _ms(pick("round_output", "voice_decode_s", listening)),
    }
    return LatencyBreakdown.from_parts(parts, s.snippet_ms)


def run_scenario(s: Scenario, mode: str = "local", out_dir: str | Path | None = None, strict: bool = False) -> ScenarioResult:
    """Execute every epoch of ``s``.  Worker overruns are reported on the result;
    with ``strict`` they raise DeadlineOverrun instead (after artifacts are written)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "local":
        res = run_local(s)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            res.transcript.dump(Path(out_dir) / "transcript.jsonl")
    else:
        if out_dir is None:
            raise ValueError("process mode needs an output directory")
        res = run_processes(s, out_dir)
    if strict and res.overruns:
        raise DeadlineOverrun(f"{res.overruns} worker rounds missed their deadline")
    return res


# ---------------------------------------------------------------------------
# Snippet-length search
# ---------------------------------------------------------------------------

MAX_RATIO = 1.1


@dataclass
class SnippetSearch:
    chosen: int | None
    ratios: dict[int, float]
    worker_ms: dict[int, float]


def find_snippet_length(s: Scenario, candidates: list[int], max_ratio: float = MAX_RATIO, mode: str = "local", out_dir=None) -> SnippetSearch:
    """Smallest snippet length whose mean worker time per round is at most
    ``max_ratio`` times the snippet length.  Every candidate is measured and
    reported; NoFeasible carries the search when none qualifies."""
    if list(candidates) != sorted(candidates):
        raise ValueError("candidates must be sorted ascending")
    ratios, worker_ms = {}, {}
    chosen = None
    for c in candidates:
        sc = s.with_(snippet_ms=c, round_ms=c, processing_budget_ms=None)
        sub = None if out_dir is None else Path(out_dir) / f"snippet-{c}"
        res = run_scenario(sc, mode, sub)
        mean = float(np.mean(res.worker_ms)) if res.worker_ms else 0.0
        worker_ms[c] = mean
        ratios[c] = mean / c
        if chosen is None and ratios[c] <= max_ratio:
            chosen = c
    search = SnippetSearch(chosen, ratios, worker_ms)
    if chosen is None:
        err = NoFeasible(f"no candidate reaches ratio <= {max_ratio}: {ratios}")
        err.search = search
        raise err
    return search

