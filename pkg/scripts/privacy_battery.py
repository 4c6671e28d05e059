#!/usr/bin/env python3
"""Paired runs that differ only in who calls; prints per-node shape differences (expected: none)."""

import argparse
from pathlib import Path

from pirates.testbed.runner import run_scenario
from pirates.testbed.scenario import Scenario
from pirates.transcript import shape_diff

PEOPLE = ["ann", "ben", "cat", "dan", "eve", "fay"]
GROUPS = {"g1": ["ann", "ben", "cat"], "g2": ["dan", "eve"], "g3": ["ann", "dan", "fay"]}
PAIRS = {
    "call vs idle": ({"ann": "g1"}, {}, {}, {}),
    "different callers": ({"ann": "g1"}, {}, {"ben": "g1"}, {}),
    "different groups": ({"ann": "g1"}, {}, {"dan": "g2"}, {}),
    "two calls vs one": ({"ann": "g1", "dan": "g2"}, {}, {"fay": "g3"}, {}),
    "hang-up vs full call": ({"ann": "g1"}, {"ben": 2}, {"ann": "g1"}, {}),
    "competing invites vs idle": ({"ann": "g1", "fay": "g3"}, {}, {}, {}),
}


def scenario(intents, hangups, **cfg) -> Scenario:
    return Scenario(clients=PEOPLE, groups=GROUPS, intents={1: intents}, hangups={1: hangups}, **cfg)


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--mode", choices=["local", "process"], default="local")
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--out", default="results/privacy")
    a = p.parse_args()
    cfg = dict(rounds=a.rounds, relays=2, workers=2, seed=5)
    if a.mode == "process":
        cfg.update(round_ms=400, snippet_ms=250)
    failures = 0
    for k, (name, (ia, ha, ib, hb)) in enumerate(PAIRS.items()):
        out = Path(a.out) / f"pair{k}"
        ra = run_scenario(scenario(ia, ha, **cfg), a.mode, out / "a" if a.mode == "process" else None)
        rb = run_scenario(scenario(ib, hb, **cfg), a.mode, out / "b" if a.mode == "process" else None)
        diff = shape_diff(ra.transcript, rb.transcript)
        failures += bool(diff)
        print(f"{name:28s} {'identical' if not diff else diff}")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
