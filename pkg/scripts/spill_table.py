"""Installs per spill for several bucket capacities, next to the analytic estimate."""

import argparse
import time

from mirage.analytic import installs_per_sae, steady_state
from mirage.ballsim import BallSimConfig, run_trial


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--capacities", type=int, nargs="+", default=[8, 9, 10, 11])
    ap.add_argument("--throws", type=float, default=1e7)
    ap.add_argument("--selection", choices=("load-aware", "random"), default="load-aware")
    ap.add_argument("--order", choices=("remove-first", "insert-first"), default="remove-first")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = steady_state()
    print(f"{'W':>3} {'throws':>9} {'spills':>9} {'installs/spill':>15} {'analytic':>10} {'sec':>6}")
    for w in args.capacities:
        cfg = BallSimConfig(bucket_capacity=w, throws=int(args.throws), seed=args.seed,
                            selection=args.selection, order=args.order)
        t = time.perf_counter()
        st = run_trial(cfg)
        print(f"{w:>3} {st.throws:>9.1e} {st.spills:>9} {st.installs_per_spill:>15.4g} "
              f"{installs_per_sae(model, w):>10.3g} {time.perf_counter() - t:>6.1f}")


if __name__ == "__main__":
    main()
