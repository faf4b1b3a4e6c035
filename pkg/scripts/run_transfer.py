"""Hemisphere transfer accuracy and stripe surrogate-SIFID (field vs nn) on the stretched ellipsoid."""
import argparse

from texfield import experiments as ex

p = argparse.ArgumentParser()
p.add_argument("--seeds", type=int, nargs="+", default=[0])
args = p.parse_args()
for s in args.seeds:
    h = ex.hemisphere_transfer(seed=s)
    st = ex.stripe_transfer(seed=s)
    print(f"seed {s}: hemisphere {100 * h.value:.1f}%  stripe SIFID field {st.value:.4f} nn {st.extra['nn']:.4f}")
