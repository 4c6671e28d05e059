"""Invite-processing benchmarks and the small regressions used to judge their shape."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..dialing import (
    GroupDescriptor,
    gaddra_cover_invite,
    gaddra_make_invite,
    gaddra_process,
    make_cover_invite,
    make_invite,
    process_invites,
)

MODES = ("pirates", "gaddra")


@dataclass(frozen=True)
class BenchResult:
    mode: str
    n: int
    group_size: int
    reps: int
    mean_s: float
    std_s: float


def _group(rng: np.random.Generator, size: int) -> GroupDescriptor:
    members = tuple(rng.bytes(32) for _ in range(size))
    return GroupDescriptor("bench", rng.bytes(32), members, my_index=0)


def _corpus(mode: str, n: int, group: GroupDescriptor, epoch: int, rng: np.random.Generator):
    """``n`` invites, one of them a real invite from another member at a random position."""
    if mode == "pirates":
        invites = [make_cover_invite(rng) for _ in range(n - 1)]
        real = make_invite(group.gmk, group.member_pubkeys[-1], epoch)
    else:
        invites = [gaddra_cover_invite(rng) for _ in range(n - 1)]
        real = gaddra_make_invite(group.gmk, rng)
    invites.insert(int(rng.integers(0, n)), real)
    return invites


def bench_dialing(
    n: int,
    group_size: int,
    mode: str,
    reps: int = 100,
    corpora: int = 4,
    seed: int | None = None,
) -> BenchResult:
    """Time one client's processing of an ``n``-invite broadcast for a group of ``group_size``.

    The broadcast is stored in a hash set as it arrives (the client does this
    on receipt), so only the per-group work is timed.  ``corpora`` distinct
    randomized broadcasts are cycled through the ``reps`` repetitions.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if n < 1 or group_size < 2:
        raise ValueError("need n >= 1 and group_size >= 2")
    rng = np.random.default_rng(seed)
    epoch = 1
    group = _group(rng, group_size)
    sets = [_corpus(mode, n, group, epoch, rng) for _ in range(corpora)]
    if mode == "pirates":
        sets = [set(c) for c in sets]
    times = np.empty(reps)
    for i in range(reps):
        received = sets[i % corpora]
        t0 = time.perf_counter()
        if mode == "pirates":
            found = process_invites(received, [group], epoch)
        else:
            found = gaddra_process(received, [group])
        times[i] = time.perf_counter() - t0
        if not found:
            raise AssertionError("benchmark corpus lost its real invite")
    return BenchResult(mode, n, group_size, reps, float(times.mean()), float(times.std(ddof=1) if reps > 1 else 0.0))


def linear_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares slope, intercept and coefficient of determination."""
    x, y = np.asarray(xs, float), np.asarray(ys, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def loglog_slope(xs, ys) -> float:
    """Growth exponent k in y ~ x^k."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])
