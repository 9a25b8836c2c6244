"""Prompt efficiency on the bundled 6-scene workload: images per query and token reduction.

Usage: python3 scripts/efficiency.py [--k 5] [--out results/efficiency.json]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from msgnav.sim.episode import EpisodeConfig
from msgnav.sim.experiments import WORKLOAD_SCENES, efficiency_report, run_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=5, help="Objects kept by the focus step.")
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    results = run_suite(WORKLOAD_SCENES, EpisodeConfig(k=args.k))
    report = efficiency_report([s for r in results for s in r.transcript])
    report["episodes"] = len(results)
    ipq = report["images_per_query"]
    print(f"{report['episodes']} episodes, {report['queries']} queries, k={args.k}")
    print(f"images per query: mean {ipq['mean']:.2f}, p50 {ipq['p50']:g}, p90 {ipq['p90']:g}, max {ipq['max']:g}")
    print(f"prompt tokens: key {report['tokens_key_mean']:.0f} vs full graph {report['tokens_full_mean']:.0f} "
          f"({100 * report['token_reduction']:.1f}% reduction)")
    print("reduction by graph size at query time:")
    buckets: dict[int, list[int]] = {}
    for r in results:
        for s in r.transcript:
            if "tokens_key" in s and s.get("action", {}).get("kind") != "give_up":
                b = buckets.setdefault(s["n_objects"] // 5 * 5, [0, 0, 0])
                b[0] += s["tokens_key"]
                b[1] += s["tokens_full"]
                b[2] += 1
    report["by_graph_size"] = {}
    for lo in sorted(buckets):
        key, full, n = buckets[lo]
        red = 1.0 - key / full if full else 0.0
        report["by_graph_size"][f"{lo}-{lo + 4}"] = {"queries": n, "token_reduction": red}
        print(f"  {lo:3d}-{lo + 4:<3d} objects: {n:4d} queries, {100 * red:6.1f}%")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
