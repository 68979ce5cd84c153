"""Walk one composite image through the restoration chain.

First with exact oracle restorers and the ground-truth discriminator, then
with classical restorers and a freshly trained discriminator.

    python demos/chain_walkthrough.py [--label h+r+n1] [--seed 3] [--out walkthrough]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from chainrestore import (
    BasisSet,
    CoRConfig,
    MarginConfig,
    OracleDD,
    RestorerRegistry,
    TrainedDD,
    gen_clean,
    parse_label,
    psnr,
    run_cor,
    save_png,
    synthesize,
)
from chainrestore.experiments import UIRD_BASES, train_dd
from chainrestore.imaging import quantize


def show(title, trace):
    print(f"\n{title}: {trace.n_restorations} steps, {trace.termination}")
    for step in trace.steps:
        print(f"  step {step.index}: {step.choice:<12} psnr {step.psnr:6.2f} dB")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--label", default="h+r+n1")
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--out", default="walkthrough")
    args = ap.parse_args()
    out = Path(args.out)

    clean = quantize(gen_clean(args.seed))
    degraded, record = synthesize(clean, parse_label(args.label), master_seed=args.seed)
    print(f"{record.label}: input PSNR {psnr(degraded, clean):.2f} dB")
    save_png(clean, out / "clean.png")
    save_png(degraded, out / "degraded.png")

    # exact inverses: the chain undoes the composition outermost-first
    oracle = RestorerRegistry(BasisSet(["low", "haze", "rain", "snow", "noise15", "noise25", "noise50"]))
    dump = lambda name: (lambda i, x: save_png(x, out / name / f"step_{i:02d}.png"))
    _, trace = run_cor(degraded, oracle, OracleDD(oracle), context=record, ground_truth=clean,
                       on_step=dump("oracle"))
    show("oracle restorers", trace)

    # classical restorers, discriminator trained on synthetic patches
    model, losses = train_dd(UIRD_BASES, seed=args.seed)
    print(f"\ntrained discriminator: final loss {losses[-1]:.3f}")
    classical = RestorerRegistry(UIRD_BASES, "classical")
    margins = MarginConfig.defaults(classical.bases)
    dd = TrainedDD(model, margins, seed=args.seed)
    restored, trace = run_cor(quantize(degraded), classical, dd, CoRConfig(margins=margins),
                              ground_truth=clean, on_step=dump("classical"))
    show("classical restorers", trace)
    save_png(restored, out / "restored.png")
    print(f"\nstep images written under {out}/")


if __name__ == "__main__":
    main()
