"""Writes the bundled benchmark datasets to data/ as CSV files.

Usage: python3 tools/export_datasets.py [output_dir]
"""

import csv
import sys
from pathlib import Path

import numpy as np
from sklearn import datasets


def write(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"{path}: {len(rows)} rows, {len(header)} columns")


def export_sklearn(out, name, loader, classification):
    d = loader()
    header = [str(c).replace(" ", "_") for c in d.feature_names] + ["target"]
    rows = []
    for x, y in zip(d.data, d.target):
        label = d.target_names[y] if classification else repr(float(y))
        rows.append([repr(float(v)) for v in x] + [label])
    write(out / f"{name}.csv", header, rows)


def abalone_like(out, n=1000, seed=7):
    # Same column layout as the UCI Abalone file: one 3-level categorical,
    # seven correlated size measurements and an integer target.
    rng = np.random.default_rng(seed)
    sex = rng.choice(["M", "F", "I"], size=n, p=[0.37, 0.31, 0.32])
    size = rng.gamma(6.0, 0.09, size=n) + np.where(sex == "I", 0.0, 0.12)
    length = np.clip(size + rng.normal(0, 0.02, n), 0.07, 0.82)
    diameter = 0.8 * length + rng.normal(0, 0.01, n)
    height = 0.34 * length + rng.normal(0, 0.012, n)
    whole = 3.0 * length**3 + rng.normal(0, 0.03, n)
    shucked = 0.43 * whole + rng.normal(0, 0.02, n)
    viscera = 0.22 * whole + rng.normal(0, 0.01, n)
    shell = 0.29 * whole + rng.normal(0, 0.015, n)
    rings = np.maximum(1, np.round(3 + 14 * length + rng.normal(0, 2, n))).astype(int)
    header = ["Sex", "Length", "Diameter", "Height", "Whole_weight", "Shucked_weight",
              "Viscera_weight", "Shell_weight", "Rings"]
    rows = []
    for i in range(n):
        vals = [length[i], diameter[i], height[i], whole[i], shucked[i], viscera[i], shell[i]]
        row = [sex[i]] + [f"{max(v, 0.001):.4f}" for v in vals] + [str(rings[i])]
        if i % 97 == 5:
            row[3] = "?"
        rows.append(row)
    write(out / "abalone_like.csv", header, rows)


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data")
    out.mkdir(parents=True, exist_ok=True)
    export_sklearn(out, "wine", datasets.load_wine, True)
    export_sklearn(out, "breast_cancer", datasets.load_breast_cancer, True)
    export_sklearn(out, "diabetes", lambda: datasets.load_diabetes(scaled=False), False)
    export_sklearn(out, "digits", datasets.load_digits, True)
    abalone_like(out)


if __name__ == "__main__":
    main()
