#!/usr/bin/env python3
"""Hyperparameter sweeps on synthetic embeddings.

Reproduces the tuning grids exposed by the sweep command: the score
blend alpha, the regularization epsilon, scoring batch size, and the
top-k view selection count. Writes one CSV per axis under runs/sweeps/
and prints each table.
"""

import argparse
import csv
from pathlib import Path

from otdet.cli import main as otdet


def run(args):
    assert otdet([str(a) for a in args]) == 0, f"command failed: {args}"


def show(path):
    print(f"\n== {path} ==")
    with open(path) as fh:
        for row in csv.reader(fh):
            print("  " + "  ".join(f"{c:>22}" for c in row))


def cli():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/sweeps", type=Path)
    parser.add_argument("--seed", default=0, type=int)
    args = parser.parse_args()

    out = args.out
    data = out / "data"
    run(["synth", "--out", data, "--seed", args.seed, "--n-views", "16"])

    base = [
        "--test", data / "id.otdf", "--ood", data / "ood.otdf",
        "--text", data / "text.otdf",
    ]
    run(
        ["sweep", "--axis", "alpha", *base, "--out", out / "sweep_alpha.csv",
         "--alphas", ",".join(str(a / 10) for a in range(11))]
    )
    run(
        ["sweep", "--axis", "epsilon", *base, "--out", out / "sweep_epsilon.csv",
         "--epsilons", "50,60,70,80,90,100,110,120,130,140,150"]
    )
    run(
        ["sweep", "--axis", "batch", *base, "--out", out / "sweep_batch.csv",
         "--batch-sizes", "16,64,128,256,all"]
    )
    run(
        ["sweep", "--axis", "k", *base, "--out", out / "sweep_k.csv",
         "--views", data / "id_views.otdf", "--ood-views", data / "ood_views.otdf",
         "--ks", "1,2,4,8,16"]
    )
    for axis in ("alpha", "epsilon", "batch", "k"):
        show(out / f"sweep_{axis}.csv")


if __name__ == "__main__":
    cli()
