"""Analytic cost of one round: distributing snippets and computing/sending PIR answers.

All terms are in seconds.  With one relay the model is the single-relay
baseline; with ``n_workers / 20`` relays it is the sharded relay layer.

    client_send = snippet_bits / client_bw
    relay_send  = n_workers * (n_clients * snippet_bits / n_relays) / server_bw
    compute     = n_clients * reply_ms / (n_workers * parallel_slots)
    worker_send = (n_clients / n_workers) * answer_bytes * 8 / server_bw

Bandwidths use binary prefixes (1 Mb/s = 2^20 bit/s, 1 Gb/s = 2^30 bit/s).
With these units the model reproduces the reference curves to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

MBIT = 2**20
GBIT = 2**30

# Reference points (workers, seconds).
ADDRA_ANCHORS = {
    20: 0.530748866780599,
    60: 0.23117230428059896,
    100: 0.2038090751139323,
    140: 0.21533346499488468,
    180: 0.23982039455837675,
    220: 0.27019938761393225,
}
PIRATES_ANCHORS = {
    20: 0.530748866780599,
    60: 0.1904822001139323,
    100: 0.12242886678059896,
    140: 0.09326315249488466,
    180: 0.07705997789171007,
    220: 0.06674886678059896,
}


@dataclass(frozen=True)
class ScalabilityParams:
    n_clients: int = 2**15
    n_workers: int = 20
    n_relays: int = 1
    snippet_bits: int = 400
    client_bw_bps: float = 100 * MBIT
    server_bw_bps: float = 12 * GBIT
    reply_ms: float = 13.0
    answer_bytes: int = 64 * 1024
    parallel_slots: int = 48

    def __post_init__(self):
        for name in ("n_clients", "n_workers", "n_relays", "snippet_bits", "client_bw_bps", "server_bw_bps", "reply_ms", "answer_bytes", "parallel_slots"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def cost_terms(p: ScalabilityParams) -> dict[str, float]:
    return {
        "client_send": p.snippet_bits / p.client_bw_bps,
        "relay_send": p.n_workers * (p.n_clients * p.snippet_bits / p.n_relays) / p.server_bw_bps,
        "compute": p.n_clients * (p.reply_ms / 1000) / (p.n_workers * p.parallel_slots),
        "worker_send": (p.n_clients / p.n_workers) * p.answer_bytes * 8 / p.server_bw_bps,
    }


def analytic_scalability(p: ScalabilityParams) -> float:
    return sum(cost_terms(p).values())


def relays_for(n_workers: int, workers_per_relay: int) -> int:
    return max(1, n_workers // workers_per_relay)


def sweep(workers: list[int], relays_per: int | None, base: ScalabilityParams | None = None) -> list[tuple[int, int, float]]:
    """(workers, relays, seconds) per point; ``relays_per=None`` keeps a single relay."""
    base = base or ScalabilityParams()
    out = []
    for w in workers:
        r = 1 if relays_per is None else relays_for(w, relays_per)
        out.append((w, r, analytic_scalability(replace(base, n_workers=w, n_relays=r))))
    return out


def parse_sweep(spec: str) -> tuple[str, list[int]]:
    """``workers=20..220:40`` -> ("workers", [20, 60, ..., 220])."""
    name, _, rng = spec.partition("=")
    span, _, step = rng.partition(":")
    lo, _, hi = span.partition("..")
    return name.strip(), list(range(int(lo), int(hi) + 1, int(step or 1)))
