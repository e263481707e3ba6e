"""Occupancy distribution, SAE rates, relocation gains and associativity sweep."""

import argparse

from mirage.analytic import (associativity_table, installs_per_sae,
                             installs_per_sae_with_relocation, steady_state, time_per_sae)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p0", type=float, default=4e-6)
    ap.add_argument("--load-ratio", type=float, default=8.0)
    args = ap.parse_args()

    s = steady_state(args.p0, args.load_ratio)
    print("occupancy")
    for n, (lp, regime) in enumerate(zip(s.log10_probs, s.regimes)):
        if n <= 16:
            print(f"  N={n:<2} Pr=10^{lp:8.3f}  ({regime})")
    print(f"  sum of levels: {s.probs.sum():.6f}")

    print("\ninstalls per SAE")
    for w in (12, 13, 14):
        n = installs_per_sae(s, w)
        print(f"  W={w}: {n:.3g} installs, one SAE every {time_per_sae(n).human()}")

    print("\nwith relocation (W=12)")
    base = installs_per_sae(s, 12)
    for k in range(4):
        n = installs_per_sae_with_relocation(base, k)
        print(f"  {k} attempts: {n:.3g} installs ({time_per_sae(n).human()})")

    print("\nbaseline associativity sweep (calibrated seed)")
    for r in associativity_table():
        print(f"  {r.associativity:>2}-way +{r.extra_ways_per_skew} ways/skew: "
              f"{r.installs:.3g} installs per SAE")


if __name__ == "__main__":
    main()
