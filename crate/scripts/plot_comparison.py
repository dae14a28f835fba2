#!/usr/bin/env python3
"""Plot the accuracy-vs-path-length grid produced by `pathrec compare`.

Reads the comparison CSV (seed,architecture,m,accuracy,precision,recall,f1),
averages metrics over seeds, and draws one line per architecture. Falls
back to a text table when matplotlib is unavailable.
"""

import argparse
import csv
import sys
from collections import defaultdict


def load(path):
    cells = defaultdict(list)  # (arch, m) -> [accuracy, ...]
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            cells[(row["architecture"], int(row["m"]))].append(float(row["accuracy"]))
    return {key: sum(v) / len(v) for key, v in cells.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", help="comparison.csv from `pathrec compare`")
    ap.add_argument("--out", default="comparison.png", help="output image path")
    args = ap.parse_args()

    cells = load(args.csv)
    if not cells:
        sys.exit("no rows in " + args.csv)
    archs = sorted({a for a, _ in cells})
    lengths = sorted({m for _, m in cells})

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; accuracy by (architecture, m):")
        for a in archs:
            row = "  ".join(f"m={m}: {cells.get((a, m), float('nan')):.4f}" for m in lengths)
            print(f"{a:18s} {row}")
        return

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for a in archs:
        ys = [cells.get((a, m)) for m in lengths]
        ax.plot(lengths, ys, marker="o", label=a)
    ax.set_xlabel("path length m")
    ax.set_ylabel("accuracy (mean over seeds)")
    ax.set_xticks(lengths)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print("wrote", args.out)


if __name__ == "__main__":
    main()
