"""Run the planar seminorm counterexample and print the table."""

import argparse
import json

import numpy as np

from cvxjet.repro import Prop31Config, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--small", action="store_true", help="reduced sampling for a quick look")
    ap.add_argument("--json", help="write the full result to this path")
    args = ap.parse_args()
    cfg = Prop31Config(j_values=(1, 2), grid_n=41, samples_per_region=5, rho_samples=80) \
        if args.small else Prop31Config()
    out = run(cfg)
    print("h_min by component:", {k: f"{v:.3e}" for k, v in out["h_min"].items()})
    print(f"{'j':>3} {'jets':>5}  mu_bound / mu_limit / rho")
    for row in out["table"]:
        print(f"{row['j']:>3} {row['jets']:>5}  {np.round(row['mu_bound'], 3).tolist()}"
              f" / {np.round(row['mu_limit'], 3).tolist()} / {np.round(row['rho'], 3).tolist()}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=2, default=float)


if __name__ == "__main__":
    main()
