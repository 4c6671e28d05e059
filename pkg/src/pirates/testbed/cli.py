"""``testbed`` command: scenario runs, dialing benchmarks, scalability model, snippet search."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import NoFeasible
from .bench import MODES as BENCH_MODES
from .bench import bench_dialing
from .csvout import breakdown_csv, dialing_csv, scalability_csv, shapes_csv, snippet_csv
from .latency import mouth_to_ear
from .runner import MAX_RATIO, MODES, check_deliveries, find_snippet_length, run_scenario
from .scalability import ScalabilityParams, parse_sweep, sweep
from .scenario import load_scenario


def cmd_run(a) -> int:
    s = load_scenario(a.scenario)
    out = Path(a.out)
    res = run_scenario(s, a.mode, out)
    rep = check_deliveries(res)
    breakdown_csv(out / "breakdown.csv", [res.breakdown])
    shapes_csv(out / "shapes.csv", res.transcript)
    summary = {
        "scenario": s.name,
        "mode": a.mode,
        "expected_deliveries": rep.expected,
        "delivered": rep.delivered,
        "wrong": rep.wrong,
        "spurious": rep.spurious,
        "fallbacks": res.fallbacks,
        "worker_overruns": res.overruns,
        "mouth_to_ear_ms": mouth_to_ear(res.breakdown),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    for k, v in summary.items():
        print(f"{k}: {v}")
    return 0 if rep.ok else 1


def cmd_bench(a) -> int:
    results = [bench_dialing(a.n, a.group, m, a.reps, seed=a.seed) for m in ([a.mode] if a.mode != "both" else BENCH_MODES)]
    for r in results:
        print(f"{r.mode}: n={r.n} G={r.group_size} reps={r.reps} mean={r.mean_s * 1e6:.2f} us std={r.std_s * 1e6:.2f} us")
    if a.out:
        dialing_csv(a.out, results)
    return 0


def cmd_scalability(a) -> int:
    name, workers = parse_sweep(a.sweep)
    if name != "workers":
        raise SystemExit(f"can only sweep workers, not {name!r}")
    base = ScalabilityParams(n_clients=a.clients, snippet_bits=a.snippet_bits)
    addra, pirates = sweep(workers, None, base), sweep(workers, a.relays_per, base)
    print("workers  relays  addra_s     pirates_s")
    for (w, _, ta), (_, r, tp) in zip(addra, pirates):
        print(f"{w:7d}  {r:6d}  {ta:.6f}  {tp:.6f}")
    if a.out:
        scalability_csv(a.out, addra, pirates)
    return 0


def cmd_sweep_snippet(a) -> int:
    s = load_scenario(a.scenario)
    if a.throttle_ms is not None:
        s = s.with_(throttle_ms=a.throttle_ms)
    candidates = list(range(a.from_, a.to + 1, a.step))
    try:
        search = find_snippet_length(s, candidates, a.max_ratio)
        code = 0
    except NoFeasible as exc:
        search, code = exc.search, 1
    for c in candidates:
        print(f"{c:4d} ms  worker {search.worker_ms[c]:8.3f} ms  ratio {search.ratios[c]:.3f}")
    print(f"chosen: {search.chosen}")
    if a.out:
        snippet_csv(Path(a.out) / "snippet.csv", search.worker_ms, search.ratios, a.max_ratio)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="testbed", description="Experiment orchestration.")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="execute a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", required=True)
    r.add_argument("--mode", choices=MODES, default="process")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench-dialing", help="time invite processing")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--group", type=int, required=True)
    b.add_argument("--mode", choices=[*BENCH_MODES, "both"], required=True)
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", default=None, help="CSV path")
    b.set_defaults(func=cmd_bench)

    sc = sub.add_parser("scalability", help="analytic worker-scalability model")
    sc.add_argument("--sweep", default="workers=20..220:40")
    sc.add_argument("--relays-per", type=int, default=20)
    sc.add_argument("--clients", type=int, default=2**15)
    sc.add_argument("--snippet-bits", type=int, default=400)
    sc.add_argument("--out", default=None, help="CSV path")
    sc.set_defaults(func=cmd_scalability)

    sw = sub.add_parser("sweep-snippet", help="search the smallest sustainable snippet length")
    sw.add_argument("scenario")
    sw.add_argument("--from", dest="from_", type=int, default=40)
    sw.add_argument("--to", type=int, default=300)
    sw.add_argument("--step", type=int, default=20)
    sw.add_argument("--max-ratio", type=float, default=MAX_RATIO)
    sw.add_argument("--throttle-ms", type=float, default=None)
    sw.add_argument("--out", default=None, help="output directory")
    sw.set_defaults(func=cmd_sweep_snippet)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    return a.func(a)


if __name__ == "__main__":
    sys.exit(main())
