"""Paired check of one factor group: does moving it low to high move a response?

    python scripts/run_directional.py --factors ABCDE --response avg_tourist_hospital_queue_wait

Both arms share seeds replication by replication (common random numbers).
The other factors stay at the chosen preset.  Reports a one-sided sign
test in the direction of the mean change.
"""

import argparse
import dataclasses

import numpy as np
from scipy import stats

from medtour.config import FACTORS, PRESETS, decode_run, preset
from medtour.metrics import METRIC_NAMES
from medtour.model import run_replication


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--factors", default="ABCDE")
    ap.add_argument("--response", choices=METRIC_NAMES, default="avg_tourist_hospital_queue_wait")
    ap.add_argument("--setting", choices=PRESETS, default="final")
    ap.add_argument("--pairs", type=int, default=30)
    ap.add_argument("--horizon-days", type=float, default=120.0)
    ap.add_argument("--seed", type=int, default=777)
    args = ap.parse_args()
    if not set(args.factors) <= set(FACTORS):
        ap.error(f"factors must be letters from {''.join(FACTORS)}")

    base = dataclasses.replace(preset(args.setting), horizon_days=args.horizon_days, master_seed=args.seed)
    low = decode_run({f: -1 for f in args.factors}, base)
    high = decode_run({f: +1 for f in args.factors}, base)
    diffs = []
    for rep in range(args.pairs):
        a = run_replication(low, rep)[0].as_dict()[args.response]
        b = run_replication(high, rep)[0].as_dict()[args.response]
        diffs.append(b - a)
        print(f"pair {rep:2d}: low {a:10.3f}  high {b:10.3f}  change {b - a:+.3f}")
    diffs = np.array(diffs)
    down, up = int((diffs < 0).sum()), int((diffs > 0).sum())
    side = "less" if diffs.mean() < 0 else "greater"
    p = stats.binomtest(up, up + down, 0.5, alternative=side).pvalue if up + down else 1.0
    print(f"mean change {diffs.mean():+.3f}; {down} down, {up} up; one-sided sign test p = {p:.3g}")


if __name__ == "__main__":
    main()
