#!/usr/bin/env python3
"""Invite-processing cost: sweep N at fixed G and G at fixed N, both modes, to CSV."""

import argparse

from pirates.testbed.bench import MODES, bench_dialing, linear_fit, loglog_slope
from pirates.testbed.csvout import dialing_csv


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n-exp", default="12..17", help="log2 N range, inclusive")
    p.add_argument("--group", type=int, default=8)
    p.add_argument("--groups", default="2,4,8,16,32,64")
    p.add_argument("--fixed-n", type=int, default=2**15)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="results/dialing.csv")
    a = p.parse_args()

    lo, hi = (int(x) for x in a.n_exp.split(".."))
    ns = [2**k for k in range(lo, hi + 1)]
    gs = [int(g) for g in a.groups.split(",")]
    results = []
    for mode in MODES:
        by_n = [bench_dialing(n, a.group, mode, a.reps, seed=a.seed) for n in ns]
        by_g = [bench_dialing(a.fixed_n, g, mode, a.reps, seed=a.seed) for g in gs if g != a.group or a.fixed_n not in ns]
        results += by_n + by_g
        _, _, r2 = linear_fit(ns, [r.mean_s for r in by_n])
        g_points = sorted((r.group_size, r.mean_s) for r in results if r.mode == mode and r.n == a.fixed_n)
        slope = loglog_slope([g for g, _ in g_points], [t for _, t in g_points])
        print(f"{mode}: linear-in-N R2={r2:.4f}, log-log slope in G={slope:.2f}")
        for r in by_n:
            print(f"  N={r.n:7d} G={r.group_size:3d} {r.mean_s * 1e6:10.2f} us")
    dialing_csv(a.out, results)
    print(f"wrote {a.out}")


if __name__ == "__main__":
    main()
