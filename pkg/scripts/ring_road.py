#!/usr/bin/env python3
"""Light (32) and dense (37 vehicle) ring-road runs with AR(p) drivers."""
import argparse
from pathlib import Path

import numpy as np

from cfcal.simulation import RingConfig, simulate_ring, write_time_space_csv
from cfcal.svg import time_space_svg
from cfcal.synthetic import recovery_fixture, reported_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--order", type=int, default=5)
    ap.add_argument("--steps", type=int, default=15000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--heterogeneous", action="store_true",
                    help="one perturbed driver per vehicle instead of a shared model")
    ap.add_argument("--out", default="ring_road")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    for n in (32, 37):
        cfg = RingConfig(n_vehicles=n, steps=args.steps)
        if args.heterogeneous:
            models = recovery_fixture(args.seed, n_drivers=n, order=args.order).drivers
        else:
            models = reported_model(args.order)
        ring = simulate_ring(cfg, models, args.seed)
        std = ring.spatial_speed_std()[-5000:]
        print(f"{n} vehicles: mean speed {ring.v[-5000:].mean():.2f} m/s, spatial speed std "
              f"{std.mean():.2f} (min {std.min():.2f}), collisions {len(ring.collisions)}, "
              f"speed-floor events {ring.speed_floor_events}")
        write_time_space_csv(out / f"ring_{n}.csv", ring, every=10)
        sl = slice(-5000, None, 10)
        time_space_svg(out / f"ring_{n}.svg", ring.times[sl], ring.wrapped()[sl], ring.v[sl],
                       title=f"{n} vehicles, last 5000 steps", circumference=cfg.circumference)
    print(f"wrote {out}/")


if __name__ == "__main__":
    main()
