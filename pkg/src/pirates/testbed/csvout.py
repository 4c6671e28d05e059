"""CSV artifacts, one file per experiment, rows in a deterministic order.

Headers:

* ``breakdown.csv``: the twelve latency columns, milliseconds.
* ``scalability.csv``: model, workers, relays, seconds, reference_s, delta_pct.
* ``dialing.csv``: mode, n, group_size, reps, mean_s, std_s.
* ``snippet.csv``: snippet_ms, worker_ms, ratio, feasible.
* ``shapes.csv``: node, phase, direction, msg_type, size, count.
"""

from __future__ import annotations

import csv
from pathlib import Path

from ..transcript import Transcript
from ..wire import MessageType
from .bench import BenchResult
from .latency import COLUMNS, LatencyBreakdown
from .scalability import ADDRA_ANCHORS, PIRATES_ANCHORS


def emit_csv(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])
    return path


def breakdown_csv(path, breakdowns: list[LatencyBreakdown]) -> Path:
    return emit_csv(path, list(COLUMNS), [[round(v, 4) for v in b.row()] for b in breakdowns])


def scalability_csv(path, addra: list[tuple[int, int, float]], pirates: list[tuple[int, int, float]]) -> Path:
    rows = []
    for model, points, ref in (("addra", addra, ADDRA_ANCHORS), ("pirates", pirates, PIRATES_ANCHORS)):
        for w, r, t in sorted(points):
            expected = ref.get(w)
            delta = None if expected is None else 100 * (t - expected) / expected
            rows.append([model, w, r, repr(t), expected, None if delta is None else f"{delta:.6f}"])
    return emit_csv(path, ["model", "workers", "relays", "seconds", "reference_s", "delta_pct"], rows)


def dialing_csv(path, results: list[BenchResult]) -> Path:
    rows = sorted((r.mode, r.n, r.group_size, r.reps, r.mean_s, r.std_s) for r in results)
    return emit_csv(path, ["mode", "n", "group_size", "reps", "mean_s", "std_s"], rows)


def snippet_csv(path, worker_ms: dict[int, float], ratios: dict[int, float], max_ratio: float) -> Path:
    rows = [[c, f"{worker_ms[c]:.4f}", f"{ratios[c]:.4f}", int(ratios[c] <= max_ratio)] for c in sorted(ratios)]
    return emit_csv(path, ["snippet_ms", "worker_ms", "ratio", "feasible"], rows)


def shapes_csv(path, transcript: Transcript) -> Path:
    rows = []
    for node, phases in transcript.server_shapes().items():
        for phase, counter in phases.items():
            for (direction, msg_type, size), count in counter.items():
                rows.append([node, phase, direction, MessageType(msg_type).name, size, count])
    return emit_csv(path, ["node", "phase", "direction", "msg_type", "size", "count"], sorted(rows))
