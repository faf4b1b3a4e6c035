"""Stripe surrogate-SIFID with and without the appearance term, over several seeds."""
import argparse

from texfield import experiments as ex

p = argparse.ArgumentParser()
p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
p.add_argument("--delta", type=float, default=0.1)
args = p.parse_args()
wins = 0
for s in args.seeds:
    full = ex.stripe_transfer(delta_app=args.delta, seed=s).value
    ablated = ex.stripe_transfer(delta_app=0.0, seed=s).value
    wins += ablated > full
    print(f"seed {s}: full {full:.4f}  delta_app=0 {ablated:.4f}  {'ok' if ablated > full else 'REVERSED'}")
print(f"ablation direction held on {wins}/{len(args.seeds)} seeds")
