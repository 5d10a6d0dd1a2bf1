"""Key-length breakdown and minimum number of rounds for one circuit point.

    python scripts/finite_size_point.py --n 3e10
    python scripts/finite_size_point.py --params point.json --m 8
"""

import argparse
import json

from diqkd.circuit import OPERATING_POINT, CircuitParams
from diqkd.finite import SecurityParams, key_length, minimum_rounds, setup_from_params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--params", help="JSON file with CircuitParams fields (default: the eta=0.875 point)")
    ap.add_argument("--n", type=float, default=3e10)
    ap.add_argument("--m", type=int, default=8)
    ap.add_argument("--grid", type=int, default=10)
    ap.add_argument("--eps-snd", type=float, default=3e-10)
    args = ap.parse_args()

    params = CircuitParams.from_dict(json.load(open(args.params))) if args.params else OPERATING_POINT
    sec = SecurityParams.from_soundness(args.eps_snd)
    setup = setup_from_params(params, m=args.m, grid=args.grid)
    rep = key_length(setup, args.n, sec)
    print(rep.to_json())
    mr = minimum_rounds(setup, sec)
    print(f"n_min = {mr.n_min:.4e}")


if __name__ == "__main__":
    main()
