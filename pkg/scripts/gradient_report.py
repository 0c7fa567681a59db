"""Finite-difference verification of the hand-written loss gradients.

Prints, per loss family, the number of checked and skipped points (points
near a non-differentiable kink are skipped) and the worst relative error,
plus a histogram of per-point errors.
"""

import argparse
import sys

import numpy as np

from p3dvd.gradcases import CASES
from p3dvd.losses import grad_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tolerance", type=float, default=1e-4)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    ok = True
    bins = [0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4, np.inf]
    for name, make in CASES.items():
        errs, skipped = [], 0
        while len(errs) < args.points:
            f, x0, kink = make(rng)
            rep = grad_check(f, x0, tolerance=args.tolerance, kink_distance=kink)
            if rep.skipped:
                skipped += 1
            else:
                errs.append(rep.max_rel_error)
        hist, _ = np.histogram(errs, bins)
        worst = max(errs)
        ok &= worst < args.tolerance
        print(f"{name:4s} checked={len(errs)} skipped={skipped} worst={worst:.2e} median={np.median(errs):.2e}")
        for lo, hi, c in zip(bins[:-1], bins[1:], hist):
            print(f"     [{lo:.0e}, {hi:.0e})  {c}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
