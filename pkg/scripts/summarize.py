"""Print per-setting means over seeds for a sweep CSV.

    python3 scripts/summarize.py runs/full/sweep_gamma.csv
"""

import csv
import sys
from collections import defaultdict

import numpy as np


def summarize(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        metrics = [c for c in reader.fieldnames if c.startswith("r")]
        keys = [c for c in reader.fieldnames if c not in metrics and c != "seed"]
        groups = defaultdict(list)
        for row in reader:
            groups[tuple(row[k] for k in keys)].append([float(row[m]) for m in metrics])
    print("  ".join(f"{k:>10}" for k in keys + metrics) + "  seeds")
    means = {}
    for key, vals in groups.items():
        means[key] = np.mean(vals, axis=0)
        cells = list(key) + [f"{x:.4f}" for x in means[key]]
        print("  ".join(f"{c:>10}" for c in cells) + f"  {len(vals)}")
    return means


if __name__ == "__main__":
    for p in sys.argv[1:]:
        summarize(p)
