#!/usr/bin/env python3
"""Closed-form autocovariance of the reported AR(p) error models, with an SE kernel for contrast."""
import argparse
from pathlib import Path

import numpy as np

from cfcal.ar import autocovariance, se_kernel
from cfcal.svg import lines_svg
from cfcal.synthetic import REPORTED_POSTERIOR_MEANS, reported_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-lag", type=float, default=20.0, help="seconds")
    ap.add_argument("--ell", type=float, default=1.0, help="SE length scale (s)")
    ap.add_argument("--out", default="ar_autocovariance")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    dt = 0.2
    n = int(round(args.max_lag / dt))
    curves, labels = [], []
    for p in sorted(REPORTED_POSTERIOR_MEANS):
        if p == 0:
            continue
        c = autocovariance(reported_model(p).ar, n, dt=dt)
        corr = c.correlation()
        curves.append(corr)
        labels.append(f"AR({p})")
        neg = c.lag[corr < 0]
        first = f"{neg[0]:.1f} s" if neg.size else "never"
        print(f"AR({p}): first negative lag {first}, minimum {corr.min():.3f} at "
              f"{c.lag[corr.argmin()]:.1f} s")
    lags = dt * np.arange(n + 1)
    curves.append(se_kernel(1.0, args.ell, lags).gamma)
    labels.append(f"SE, l={args.ell:g} s")
    with open(out / "autocorrelation.csv", "w", encoding="utf-8") as fh:
        fh.write("lag," + ",".join(labels) + "\n")
        for i, t in enumerate(lags):
            fh.write(f"{t:.1f}," + ",".join(f"{c[i]:.6f}" for c in curves) + "\n")
    lines_svg(out / "autocorrelation.svg", lags, curves[-5:], labels[-5:],
              "error autocorrelation", "lag (s)", "correlation")
    print(f"wrote {out}/")


if __name__ == "__main__":
    main()
