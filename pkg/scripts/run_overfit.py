"""Self-reconstruction on a smoothly colored sphere; prints held-out PSNR."""
import argparse

from texfield import experiments as ex

p = argparse.ArgumentParser()
p.add_argument("--iters", type=int, default=300)
p.add_argument("--seeds", type=int, nargs="+", default=[0])
args = p.parse_args()
for s in args.seeds:
    out = ex.overfit(iterations=args.iters, seed=s)
    views = " ".join(f"{v:.2f}" for v in out.extra["per_view"])
    print(f"seed {s}: PSNR {out.value:.2f} dB  [{views}]  {out.seconds:.0f}s")
