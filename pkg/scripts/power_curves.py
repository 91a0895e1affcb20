"""Power curves of the t, AR_C and KLM tests of gamma_f = 0.5 at T = 1000.

One CSV per (instrument set, rho2, rho_eta_nu) panel, written to results/power/.
Usage: python3 scripts/power_curves.py [--reps 2000] [--seed 1] [--threads 1]
"""

import argparse
import sys

from cuear.cli import main

PANELS = [(-0.05, 0.2), (-0.65, 0.2), (-0.65, 0.99), (0.0, 0.0), (-0.05, 0.99), (-0.99, 0.99)]

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", default="2000")
    ap.add_argument("--seed", default="1")
    ap.add_argument("--threads", default="1")
    ap.add_argument("--T", default="1000")
    ap.add_argument("--outdir", default="results/power")
    args = ap.parse_args()
    status = 0
    for inst in ("lags3", "xlags"):
        for rho2, rho in PANELS:
            out = f"{args.outdir}/{inst}_rho2={rho2}_rho={rho}.csv"
            status |= main(["mc-power", "--instruments", inst, "--rho2", str(rho2),
                            "--rho-eta-nu", str(rho), "--T", args.T, "--reps", args.reps,
                            "--seed", args.seed, "--threads", args.threads, "--out", out])
    sys.exit(status)
