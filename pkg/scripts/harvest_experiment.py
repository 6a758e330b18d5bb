"""How many hourly sightings does a passive sniffer need to collect a full
FMM private-ID pool?

Runs the pool_harvest scenario over many seeds and compares the empirical
completion distribution with the coupon-collector expectation n * H_n and the
union bound on the probability of being incomplete after k draws.

    python3 scripts/harvest_experiment.py [--seeds 200] [--rotations 1000]
"""

import argparse
import statistics

from ofkit import fmm
from ofkit.sim.scenarios import completion_time, run_scenario


def expected_draws(n: int) -> float:
    return n * sum(1 / k for k in range(1, n + 1))


def miss_bound(n: int, k: int) -> float:
    return n * (1 - 1 / n) ** k


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=200)
    ap.add_argument("--rotations", type=int, default=1000)
    args = ap.parse_args()

    n = fmm.POOL_SIZE
    times, incomplete = [], 0
    for seed in range(args.seeds):
        res = run_scenario("pool_harvest", seed, {"rotations": args.rotations, "later_rotations": 0,
                                                  "bystander": False})
        t = completion_time(res.scanlog, res.params["victim_flags"], n)
        if t is None:
            incomplete += 1
        else:
            times.append(t)

    print(f"pool size {n}, {args.seeds} seeds, {args.rotations} hourly rotations each")
    print(f"coupon-collector expectation: {expected_draws(n):.1f} sightings")
    if times:
        qs = statistics.quantiles(times, n=20)
        print(f"empirical: mean {statistics.mean(times):.1f}, median {statistics.median(times):.0f}, "
              f"5%-95% {qs[0]:.0f}-{qs[-1]:.0f}, max {max(times)}")
        print(f"max completion time is {max(times) / 24:.1f} days of hourly rotation")
    print(f"incomplete runs: {incomplete}")
    print("P(incomplete) union bound:")
    for k in (100, 200, 300, 500, 1000, 2000):
        print(f"  after {k:>4} sightings: {min(1.0, miss_bound(n, k)):.3g}")


if __name__ == "__main__":
    main()
