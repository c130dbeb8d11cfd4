"""Synthesized vs closed-form JC rates for both sign policies.

Writes a CSV with the synthesized gamma1/gamma2 next to the closed-form
values and prints the worst deviation per policy away from the singular
points.
"""

import argparse
import csv
import math
from pathlib import Path

import numpy as np

from lindblad_resign.models import JCParams, JCRateReference, library_models
from lindblad_resign.synthesis import JumpSpec, SignPolicy, synthesize

LOWER = JumpSpec(1, 0, False, 2)
RAISE = JumpSpec(1, 0, True, 2)


def rates_on(times, policy, rho11):
    rhos, rhodots = library_models("jc", rho11=rho11).states(times)
    res = synthesize(times, rhos, policy, rhodots, singularity="skip")
    g1 = [sum(t.rate for t in ts if t.spec == LOWER) for ts in res.terms]
    g2 = [sum(t.rate for t in ts if t.spec == RAISE) for ts in res.terms]
    return np.array(g1), np.array(g2), res.singular


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rho11", type=float, default=1.0)
    ap.add_argument("--t-end", type=float, default=4 * math.pi)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--out", default="results/jc_rate_curves.csv")
    args = ap.parse_args()

    times = np.linspace(args.dt, args.t_end, int(round(args.t_end / args.dt)))
    params = JCParams(rho11=args.rho11)
    columns, data = ["t"], [times]
    for sign, policy in (("nonneg", SignPolicy.nonnegative()), ("nonpos", SignPolicy.nonpositive())):
        g1, g2, singular = rates_on(times, policy, args.rho11)
        ref = JCRateReference(params, sign)
        exact = np.full((len(times), 2), np.nan)
        for n, t in enumerate(times):
            try:
                exact[n] = ref.rates(t)
            except ValueError:
                pass
        g1[singular] = g2[singular] = np.nan
        away = ~singular & np.all(np.isfinite(exact), axis=1)
        # compare only where both rates are resolved on the grid
        away &= np.abs(np.sin(times)) > 0.05
        err = np.max(np.abs(np.c_[g1, g2][away] - exact[away]))
        print(f"{sign}: {singular.sum()} singular points, max |synth - exact| = {err:.2e}")
        columns += [f"gamma1_{sign}", f"gamma2_{sign}", f"gamma1_{sign}_exact", f"gamma2_{sign}_exact"]
        data += [g1, g2, exact[:, 0], exact[:, 1]]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in zip(*data):
            w.writerow(["" if not np.isfinite(v) else f"{v:.10g}" for v in row])
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
