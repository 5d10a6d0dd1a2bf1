"""Efficiency thresholds for a positive key: CHSH-only bound vs full statistics.

    python scripts/efficiency_thresholds.py --m 8 --out thresholds.csv
"""

import argparse
import csv
import logging

from diqkd.keyrate import block_threshold, chsh_threshold


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lo", type=float, default=0.80)
    ap.add_argument("--hi", type=float, default=0.95)
    ap.add_argument("--step", type=float, default=0.005)
    ap.add_argument("--cut", type=float, default=1e-5, help="rate treated as zero")
    ap.add_argument("--m", type=int, default=8)
    ap.add_argument("--out", default="thresholds.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    count = int(round((args.hi - args.lo) / args.step)) + 1
    grid = [round(args.lo + k * args.step, 6) for k in range(count)]
    chsh = chsh_threshold(grid, cut=args.cut)
    print(f"CHSH threshold: {chsh.threshold}")
    full = block_threshold(chsh.threshold, step=args.step, floor=args.lo, cut=args.cut, m=args.m)
    print(f"full-statistics threshold: {full.threshold}")

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eta", "r0", "r_block"])
        for eta in grid:
            w.writerow([eta, chsh.rates[eta], full.rates.get(eta, "")])


if __name__ == "__main__":
    main()
