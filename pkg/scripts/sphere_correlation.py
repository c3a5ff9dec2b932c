"""Correlation curve between two rigid-sphere oracles of different radius.

    python3 scripts/sphere_correlation.py [--r1 0.09] [--r2 0.10] [--n 400]

A desk-scale stand-in for comparing simulated HRTF sets: prints the weighted
and unweighted spatial correlation of the left-ear SFRS at each frequency.
"""
import argparse

import numpy as np

from morphoacoustics import correlation_curve, sphere_hrtf_oracle
from morphoacoustics.hrtf import fibonacci_directions


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--r1", type=float, default=0.09)
    ap.add_argument("--r2", type=float, default=0.10)
    ap.add_argument("--n", type=int, default=400, help="number of source directions")
    args = ap.parse_args()

    freqs = np.geomspace(100, 16000, 25)
    dirs = fibonacci_directions(args.n)
    a = sphere_hrtf_oracle(args.r1, (0, 1, 0), dirs, freqs)
    b = sphere_hrtf_oracle(args.r2, (0, 1, 0), dirs, freqs)
    weighted = correlation_curve(a, b, freqs)
    plain = correlation_curve(a, b, freqs, weighted=False)
    print("f_hz      weighted  unweighted")
    for (f, w), (_, u) in zip(weighted, plain):
        print(f"{f:8.1f}  {w:.6f}  {u:.6f}")


if __name__ == "__main__":
    main()
