"""Training and inference cost of k-order models relative to order n.

TR_n(k) grows with k (more bases to train), IR_n(k) shrinks (fewer steps
per image).  Values are exact fractions; the simulation column runs the
oracle chain over every composite and averages the real step counts.

    python demos/complexity_curves.py [--n 20] [--simulate 5]
"""

from __future__ import annotations

import argparse

from chainrestore.complexity import ir, tr
from chainrestore.cor import simulate_mean_steps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--simulate", type=int, default=5, help="cross-check IR by simulation for this n")
    args = ap.parse_args()
    print(f" k  {'TR':>12}  {'IR':>8}")
    for k in range(1, args.n + 1):
        print(f"{k:2d}  {float(tr(args.n, k)):12.2f}  {float(ir(args.n, k)):8.4f}")

    n = args.simulate
    print(f"\nn={n}: exact IR against simulated mean steps")
    for k in range(1, n + 1):
        sim = simulate_mean_steps(n, k)
        print(f"  k={k}: IR {ir(n, k)!s:>8}  simulated {sim!s:>8}  {'ok' if sim == ir(n, k) else 'MISMATCH'}")


if __name__ == "__main__":
    main()
