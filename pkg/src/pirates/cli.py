"""Command-line entry points for the coordinator, relay, worker and client roles."""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
import sys

from .config import EpochSchedule
from .crypto import HeParams
from .dialing import GroupDescriptor
from .net import ClientPlan, CoordinatorConfig, run_client, run_coordinator, run_relay, run_worker


def read_group_file(path: str) -> list[GroupDescriptor]:
    """One group per line: ``group_id hex_gmk pk_hex [pk_hex ...]``; ``#`` starts a comment."""
    groups = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            gid, gmk, *members = line.split()
            if len(members) < 2:
                raise ValueError(f"group {gid!r} needs at least two members")
            groups.append(GroupDescriptor(gid, bytes.fromhex(gmk), tuple(bytes.fromhex(m) for m in members)))
    return groups


def write_group_file(path: str, groups: list[GroupDescriptor]) -> None:
    with open(path, "w") as fh:
        for g in groups:
            fh.write(" ".join([g.group_id, g.gmk.hex(), *(pk.hex() for pk in g.member_pubkeys)]) + "\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="directory for transcript and metrics logs")
    p.add_argument("-v", "--verbose", action="store_true")


def coordinator_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coordinator", description="Registration and epoch orchestration.")
    p.add_argument("--listen", required=True, help="HOST:PORT")
    p.add_argument("--relays", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--group-size", type=int, default=3)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--round-ms", type=int, default=250)
    p.add_argument("--snippet-ms", type=int, default=250)
    p.add_argument("--phase-ms", type=int, default=150, help="duration of the mapping and each dialing phase")
    p.add_argument("--processing-budget-ms", type=int, default=None, help="default: 40%% of a round")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--clients", type=int, default=0, help="start once this many clients registered")
    p.add_argument("--register-ms", type=int, default=2000)
    p.add_argument("--lead-ms", type=int, default=1500)
    p.add_argument("--simulated-users", type=int, default=0)
    p.add_argument("--he-n", type=int, default=HeParams.n)
    p.add_argument("--seed", type=int, default=None, help="fix the mapping seeds (testing only)")
    _common(p)
    return p


def schedule_from_args(a) -> EpochSchedule:
    budget = a.processing_budget_ms if a.processing_budget_ms is not None else (a.round_ms * 2) // 5
    ph = a.phase_ms
    return EpochSchedule(a.rounds, a.round_ms, a.snippet_ms, ph, ph, ph, ph, ph, budget)


def coordinator_main(argv=None) -> int:
    a = coordinator_parser().parse_args(argv)
    _logging(a.verbose)
    cfg = CoordinatorConfig(
        a.listen,
        a.relays,
        a.workers,
        a.group_size,
        schedule_from_args(a),
        a.epochs,
        a.clients,
        a.register_ms,
        a.lead_ms,
        a.simulated_users,
        HeParams(n=a.he_n),
        a.out,
        a.seed,
    )
    asyncio.run(run_coordinator(cfg))
    return 0


def relay_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="relay", description="Invite and snippet collection.")
    p.add_argument("--coordinator", required=True, help="HOST:PORT")
    p.add_argument("--host", default="127.0.0.1", help="interface to listen on for clients")
    _common(p)
    a = p.parse_args(argv)
    _logging(a.verbose)
    asyncio.run(run_relay(a.coordinator, a.host, a.out))
    return 0


def worker_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="worker", description="PIR answer computation.")
    p.add_argument("--coordinator", required=True, help="HOST:PORT")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--serial", action="store_true", help="answer buckets one after another")
    p.add_argument("--throttle-ms", type=float, default=0.0, help="minimum processing time per round")
    _common(p)
    a = p.parse_args(argv)
    _logging(a.verbose)
    asyncio.run(run_worker(a.coordinator, a.host, a.out, not a.serial, a.throttle_ms))
    return 0


def client_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="client", description="Group-call client.")
    p.add_argument("--coordinator", required=True, help="HOST:PORT")
    p.add_argument("--group-file", default=None)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--dial", metavar="GROUPID")
    mode.add_argument("--idle", action="store_true")
    mode.add_argument("--scripted", action="store_true", help="follow --dial-plan only")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--public-key", default=None, help="hex identity; must appear in the group file")
    p.add_argument("--dial-epochs", default=None, help="comma-separated epochs to dial in (default: all)")
    p.add_argument("--hangup-round", type=int, default=None, help="hang up at this round in every epoch")
    p.add_argument("--dial-plan", action="append", default=[], metavar="E:GROUP", help="dial GROUP in epoch E")
    p.add_argument("--hangup", action="append", default=[], metavar="E:R", help="hang up at round R of epoch E")
    p.add_argument("--offline-epochs", default=None, help="comma-separated epochs to sit out entirely")
    p.add_argument("--seed", type=int, default=None)
    _common(p)
    a = p.parse_args(argv)
    _logging(a.verbose)
    groups = read_group_file(a.group_file) if a.group_file else []
    if a.public_key:
        pk = bytes.fromhex(a.public_key)
    elif len(groups) == 1 and a.dial:
        pk = groups[0].member_pubkeys[0]
    else:
        pk = os.urandom(32)
    mine = [g for g in groups if pk in g.member_pubkeys]
    dial_plan = {int(e): g for e, _, g in (x.partition(":") for x in a.dial_plan)}
    member_of = {g.group_id for g in mine}
    for gid in filter(None, [a.dial, *dial_plan.values()]):
        if gid not in member_of:
            p.error(f"not a member of group {gid!r}")
    plan = ClientPlan(
        pk,
        mine,
        a.dial,
        {int(x) for x in a.dial_epochs.split(",")} if a.dial_epochs else None,
        a.hangup_round,
        a.epochs,
        a.out,
        a.seed,
        dial_plan,
        {int(e): int(r) for e, _, r in (x.partition(":") for x in a.hangup)},
        {int(x) for x in a.offline_epochs.split(",")} if a.offline_epochs else set(),
    )
    asyncio.run(run_client(a.coordinator, plan))
    return 0


ROLES = {
    "coordinator": coordinator_main,
    "relay": relay_main,
    "worker": worker_main,
    "client": client_main,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in ROLES and argv[0] != "testbed":
        print(f"usage: pirates {{{','.join([*ROLES, 'testbed'])}}} ...", file=sys.stderr)
        return 2
    if argv[0] == "testbed":
        from .testbed.cli import main as testbed_main

        return testbed_main(argv[1:])
    return ROLES[argv[0]](argv[1:])


def _logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")


if __name__ == "__main__":
    sys.exit(main())
