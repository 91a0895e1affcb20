"""Size table for the just-identified design with instruments (x_{t-1}, x_{t-2}).

Usage: python3 scripts/table2.py [--reps 2000] [--seed 1] [--threads 1] [--out results/table2.csv]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from table1 import run  # noqa: E402

if __name__ == "__main__":
    sys.exit(run("xlags", "results/table2.csv"))
