"""Conflict attack on a known-mapping V-way cache, a set-associative cache and Mirage."""

import argparse

import numpy as np

from mirage.baselines import SetAssocLRU, VWayCache
from mirage.cache import MirageCache
from mirage.geometry import CacheGeometry
from mirage.harness import TraceSpec, generate_trace


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--length", type=int, default=1_000_000)
    ap.add_argument("--uniform", type=float, default=1e7, help="random installs for Mirage")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    g = CacheGeometry()
    attack = generate_trace(TraceSpec(kind="adversarial", length=args.length, target_set=42,
                                      sets=g.sets_per_skew), args.seed)
    models = {
        "set-assoc (identity)": SetAssocLRU.from_geometry(g, args.seed),
        "vway (identity)": VWayCache(g, args.seed, identity_mapping=True),
        "mirage (keyed)": MirageCache(g, args.seed),
    }
    print(f"adversarial trace: {args.length} distinct lines aimed at one set")
    for name, m in models.items():
        st = m.run_trace(attack.addrs)
        print(f"  {name:<22} misses={st['misses']:>8} SAE={st['sae']:>8} "
              f"({st['sae'] / max(st['misses'], 1):.2%})")

    rng = np.random.default_rng(args.seed)
    m = MirageCache(g, args.seed)
    st = m.run_trace(rng.integers(0, 1 << 40, int(args.uniform), dtype=np.uint64))
    print(f"\nmirage, {int(args.uniform):.0e} random installs: SAE={st['sae']} GLE={st['gle']}")


if __name__ == "__main__":
    main()
