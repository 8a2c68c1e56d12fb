"""Hybrid model against the procedure-only model at one factor setting.

    python scripts/run_compare.py --setting final --reps 10 --horizon-days 300

Prints the mean of every response per mode and whether the procedure-only
run comes out higher or lower.
"""

import argparse
import dataclasses

from medtour.cli import compare_table
from medtour.config import DES_ONLY, HYBRID, PRESETS, preset
from medtour.model import run_replication


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--setting", choices=PRESETS, default="final")
    ap.add_argument("--seed", type=int, default=8)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--horizon-days", type=float, default=300.0)
    args = ap.parse_args()

    base = dataclasses.replace(preset(args.setting), horizon_days=args.horizon_days, master_seed=args.seed)
    rows = {}
    for mode in (HYBRID, DES_ONLY):
        cfg = dataclasses.replace(base, mode=mode)
        rows[mode] = [run_replication(cfg, rep)[0].as_dict() for rep in range(args.reps)]

    table = compare_table(rows[HYBRID], rows[DES_ONLY])
    width = max(len(r[0]) for r in table)
    print(f"{'measure':<{width}}  {'hybrid':>10}  {'des-only':>10}")
    for label, _, h, d, rel in table:
        print(f"{label:<{width}}  {h:>10}  {d:>10}  {rel}")


if __name__ == "__main__":
    main()
