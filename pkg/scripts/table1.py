"""Size table with three lags of inflation and the gap as instruments (T = 100 and 500).

Usage: python3 scripts/table1.py [--reps 2000] [--seed 1] [--threads 1] [--out results/table1.csv]
"""

import argparse
import sys

from cuear.cli import main

TABLE_CELLS = [{"rho2": r2, "rho_eta_nu": r} for r2 in (0.0, -0.05, -0.65) for r in (0.0, 0.2, 0.99)]


def run(instruments: str, default_out: str, argv=None) -> int:
    import json
    import tempfile

    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", default="2000")
    ap.add_argument("--seed", default="1")
    ap.add_argument("--threads", default="1")
    ap.add_argument("--T", nargs="+", default=["100", "500"])
    ap.add_argument("--out", default=default_out)
    args = ap.parse_args(argv)
    cells = [{**c, "T": int(T)} for T in args.T for c in TABLE_CELLS]
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(cells, fh)
    return main(["mc-size", "--cells", fh.name, "--instruments", instruments, "--reps", args.reps,
                 "--seed", args.seed, "--threads", args.threads, "--out", args.out])


if __name__ == "__main__":
    sys.exit(run("lags3", "results/table1.csv"))
