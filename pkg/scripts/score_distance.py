"""Candidate visibility score versus distance to the nearest ground-truth viewpoint on the last-mile suite.

Usage: python3 scripts/score_distance.py [--csv results/score_distance.csv]
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

from msgnav.sim.experiments import LASTMILE_SCENES, score_distance_rows, score_distance_split


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", type=Path, default=None, help="Per-candidate rows for plotting.")
    args = ap.parse_args()
    rows = score_distance_rows(LASTMILE_SCENES)
    split = score_distance_split(rows)
    print(f"{len(rows)} scored candidates")
    print(f"score >= 0.6: n={split['n_high']:4d} mean distance to GT {split['mean_high']:.3f} m")
    print(f"score <  0.2: n={split['n_low']:4d} mean distance to GT {split['mean_low']:.3f} m")
    bins = [(0.0, 0.2), (0.2, 0.4), (0.4, 0.6), (0.6, 0.8), (0.8, 1.01)]
    for lo, hi in bins:
        ds = [r["distance_to_gt"] for r in rows if lo <= r["score"] < hi]
        if ds:
            print(f"  score [{lo:.1f}, {min(hi, 1.0):.1f}{']' if hi > 1 else ')'}: n={len(ds):4d} "
                  f"mean distance {sum(ds) / len(ds):.3f} m")
    if args.csv:
        args.csv.parent.mkdir(parents=True, exist_ok=True)
        with args.csv.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scene", "object", "ring_radius", "angle_index", "score", "distance_to_gt"])
            for r in rows:
                w.writerow([r["scene"], r["object"], r["ring_radius"], r["angle_index"],
                            f"{r['score']:.6f}", f"{r['distance_to_gt']:.4f}"])


if __name__ == "__main__":
    main()
