"""Interpolation and convexity errors for every method on the random convex suite.

The nonconvex method only promises C^{1,1} interpolation, so its convexity column is informational.
"""

import argparse
import time

import numpy as np

from cvxjet.conditions import default_k_max
from cvxjet.extend import ExtendOptions, build_model
from cvxjet.fixtures import convex_suite
from cvxjet.jets import Modulus

METHODS = ("ak", "global", "phi", "projected", "c1omega", "nonconvex")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=50)
    ap.add_argument("--midpoints", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    suite = convex_suite(args.count, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    print(f"{'method':>10} {'value_err':>10} {'convexity':>10} {'time_s':>7}")
    for method in METHODS:
        kw = {"omega": Modulus.power(0.5)} if method == "c1omega" else {}
        t0 = time.perf_counter()
        verr, cv = 0.0, -np.inf
        for inst in suite:
            js = inst.jets
            m = build_model(js, method, ExtendOptions(), **kw)
            verr = max(verr, float(np.max(np.abs(m.value(js.points) - js.values))))
            R = 4.0 * default_k_max(js)
            a, b = rng.uniform(-R, R, (2, args.midpoints, js.dim))
            F = m.value(np.vstack([a, b, 0.5 * (a + b)]))
            n = args.midpoints
            cv = max(cv, float(np.max(F[2 * n:] - 0.5 * (F[:n] + F[n:2 * n]))))
        print(f"{method:>10} {verr:10.2e} {cv:10.2e} {time.perf_counter() - t0:7.1f}")


if __name__ == "__main__":
    main()
