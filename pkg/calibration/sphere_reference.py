#!/usr/bin/env python3
"""Brute-force reference for the sphere convergence thresholds.

A self-contained (1+1)-style hill climber with the classical one-fifth
step-size rule - deliberately independent of the package's update rules -
run on the same problem (20-D sphere, start 0.5 per coordinate, initial
step 0.3, 2000 evaluations). It demonstrates that fitness above -1e-2 is
comfortably attainable within the budget, which calibrates the threshold
asserted in tests/thresholds.py.

Run:  python calibration/sphere_reference.py
"""

import json

import numpy as np

DIM = 20
EVALS = 2000
SIGMA0 = 0.3
THRESHOLD = -1e-2


def sphere(z):
    return -float(z @ z)


def one_plus_one(seed):
    rng = np.random.default_rng(seed)
    x = np.full(DIM, 0.5)
    fx = sphere(x)
    sigma = SIGMA0
    successes = []
    for _ in range(EVALS):
        y = x + sigma * rng.standard_normal(DIM)
        fy = sphere(y)
        better = fy > fx
        if better:
            x, fx = y, fy
        successes.append(better)
        if len(successes) == 10:
            rate = sum(successes) / 10.0
            sigma *= (1 / 0.817) if rate > 0.2 else 0.817
            successes.clear()
    return fx


def main():
    finals = [one_plus_one(seed) for seed in range(10)]
    ok = sum(1 for f in finals if f > THRESHOLD)
    summary = {
        "dim": DIM, "evaluations": EVALS, "sigma0": SIGMA0,
        "threshold": THRESHOLD,
        "finals": finals,
        "seeds_above_threshold": ok,
    }
    with open("calibration/sphere_reference.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    print("final fitness per seed:")
    for s, f in enumerate(finals):
        print("  seed %d: %.3e" % (s, f))
    print("%d/10 above %.0e" % (ok, THRESHOLD))


if __name__ == "__main__":
    main()
