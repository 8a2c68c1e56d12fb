"""Run the 256-run screening design and analyse it.

    python scripts/run_screening.py --out out/screen --seed 11 --horizon-days 120

At 120 simulated days one replication takes roughly 0.7 s, so the full
design with one replication finishes in about three minutes on one core.
"""

import argparse
import dataclasses
import os
import sys
import time

from medtour.analysis import analyze, format_recommendation, recommend_levels
from medtour.config import ScenarioConfig
from medtour.doe import generate_design, orchestrate, verify_design, write_design


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/screen")
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--reps", type=int, default=1)
    ap.add_argument("--horizon-days", type=float, default=120.0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--resume", action="store_true")
    args = ap.parse_args()

    design = generate_design()
    for line in verify_design(design).lines():
        print(line)
    write_design(design, args.out)

    base = dataclasses.replace(ScenarioConfig(), horizon_days=args.horizon_days)
    results = os.path.join(args.out, "results.csv")
    t0 = time.perf_counter()
    n = orchestrate(design, results, replications=args.reps, master_seed=args.seed, base=base,
                    resume=args.resume, workers=args.workers,
                    progress=lambda i, total: print(f"\r{i}/{total}", end="", file=sys.stderr))
    print(f"\n{n} replications in {time.perf_counter() - t0:.0f} s")

    models = analyze(results, os.path.join(args.out, "analysis"))
    for m in models.values():
        print(f"{m.response:<34} R2={m.r2:.3f}  adj={m.adj_r2:.3f}")
    print(format_recommendation(recommend_levels(models)), end="")


if __name__ == "__main__":
    main()
