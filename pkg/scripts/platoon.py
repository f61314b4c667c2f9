#!/usr/bin/env python3
"""Four-follower platoon behind an oscillating leader: downstream speed-variance ratios."""
import argparse
from pathlib import Path

from cfcal.simulation import (equilibrium_platoon_inits, simulate_platoon, speed_variance_ratios,
                              write_envelope_csv)
from cfcal.svg import lines_svg
from cfcal.synthetic import leader_profile, reported_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rollouts", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="platoon")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    leader = leader_profile("sawtooth", dict(low=10.0, high=20.0, period=30.0), 120.0, 0.2)
    for order in (0, 5):
        models = [reported_model(order)] * 4
        ens = simulate_platoon(leader, models, equilibrium_platoon_inits(leader, models),
                               args.rollouts, args.seed)
        ratios = speed_variance_ratios(leader, ens)
        print(f"p={order}: speed variance / leader variance by position: "
              + " ".join(f"{r:.3f}" for r in ratios))
        for k, e in enumerate(ens, start=1):
            write_envelope_csv(out / f"p{order}_follower{k}.csv", e)
        lines_svg(out / f"p{order}_speed.svg", ens[0].times,
                  [leader.v] + [e.mean("v") for e in ens],
                  ["leader"] + [f"follower {k}" for k in range(1, 5)],
                  f"mean speed, p={order}", "time (s)", "speed (m/s)")
    print(f"wrote {out}/")


if __name__ == "__main__":
    main()
