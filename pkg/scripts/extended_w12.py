"""Long W=12 run split into independent trials (one process per worker)."""

import argparse
import json
import time

from mirage.ballsim import BallSimConfig, run_parallel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--throws-per-trial", type=float, default=1e9)
    ap.add_argument("--capacity", type=int, default=12)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--seed", type=int, default=12)
    args = ap.parse_args()

    cfg = BallSimConfig(bucket_capacity=args.capacity, throws=int(args.throws_per_trial),
                        seed=args.seed)
    t = time.perf_counter()
    st = run_parallel(cfg, args.trials, workers=args.workers)
    out = {"capacity": args.capacity, "trials": args.trials, "throws": st.throws,
           "spills": st.spills, "installs_per_spill": st.installs_per_spill,
           "minutes": (time.perf_counter() - t) / 60}
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
