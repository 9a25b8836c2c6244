"""Last-mile suite: success rate with and without visibility-based viewpoint choice, swept over d.

Usage: python3 scripts/lastmile_suite.py [--out results/lastmile.json]
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from msgnav.sim.episode import DEFAULT_EVAL_DISTANCES, EpisodeConfig
from msgnav.sim.experiments import LASTMILE_SCENES, run_suite, sr_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    t0 = time.perf_counter()
    report = {}
    for label, use_vvd in (("vvd_on", True), ("vvd_off", False)):
        results = run_suite(LASTMILE_SCENES, EpisodeConfig(use_vvd=use_vvd))
        sweep = sr_sweep(results, DEFAULT_EVAL_DISTANCES)
        report[label] = {"episodes": len(results),
                         "by_distance": {f"{d:g}": {"sr": sr, "spl": spl} for d, (sr, spl) in sweep.items()}}
    print(f"{'d':>6} {'SR on':>8} {'SR off':>8} {'gap':>7} {'SPL on':>8} {'SPL off':>8}")
    for d in DEFAULT_EVAL_DISTANCES:
        on, off = report["vvd_on"]["by_distance"][f"{d:g}"], report["vvd_off"]["by_distance"][f"{d:g}"]
        print(f"{d:6.2f} {100 * on['sr']:8.2f} {100 * off['sr']:8.2f} {100 * (on['sr'] - off['sr']):7.2f} "
              f"{100 * on['spl']:8.2f} {100 * off['spl']:8.2f}")
    print(f"{report['vvd_on']['episodes']} episodes per configuration, {time.perf_counter() - t0:.1f} s")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
