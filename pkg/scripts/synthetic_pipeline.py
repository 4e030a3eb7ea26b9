#!/usr/bin/env python3
"""End-to-end demo on synthetic embeddings.

Generates a seeded dataset, refines the view bundles, scores original and
refined features, and prints detection metrics for every score column.
Outputs land in runs/synthetic/.
"""

import argparse
import json
from pathlib import Path

from otdet import metrics
from otdet.cli import main as otdet
from otdet.scoring import read_scores_csv, score_column


def run(args):
    assert otdet([str(a) for a in args]) == 0, f"command failed: {args}"


def cli():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/synthetic", type=Path)
    parser.add_argument("--seed", default=0, type=int)
    parser.add_argument("--n-views", default=16, type=int)
    parser.add_argument("--epsilon", default=90.0, type=float)
    parser.add_argument("--alpha", default=0.5, type=float)
    args = parser.parse_args()

    out = args.out
    data = out / "data"
    run(["synth", "--out", data, "--seed", args.seed, "--n-views", args.n_views])

    for name in ("id", "ood"):
        run(
            [
                "refine",
                "--test", data / f"{name}.otdf",
                "--views", data / f"{name}_views.otdf",
                "--text", data / "text.otdf",
                "--out", out / f"{name}_refined.otdf",
                "--decisions", out / f"{name}_decisions.jsonl",
            ]
        )
        for variant, path in (("raw", data / f"{name}.otdf"), ("refined", out / f"{name}_refined.otdf")):
            run(
                [
                    "score", "--test", path, "--text", data / "text.otdf",
                    "--out", out / f"{name}_{variant}_scores.csv",
                    "--epsilon", args.epsilon, "--alpha", args.alpha, "--mcm",
                ]
            )

    print(f"\n{'variant':<10} {'column':<8} {'FPR95':>8} {'AUROC':>8}")
    for variant in ("raw", "refined"):
        id_rows = read_scores_csv(out / f"id_{variant}_scores.csv")
        ood_rows = read_scores_csv(out / f"ood_{variant}_scores.csv")
        for column in ("s_mcm", "s_sem", "s_dist", "s_ot"):
            ids = score_column(id_rows, column)
            oods = score_column(ood_rows, column)
            fpr, _ = metrics.fpr_at_tpr(ids, oods)
            print(f"{variant:<10} {column:<8} {fpr:8.4f} {metrics.auroc(ids, oods):8.4f}")

    run(
        [
            "eval", "--id", out / "id_refined_scores.csv",
            "--ood", out / "ood_refined_scores.csv",
            "--out", out / "metrics.json", "--density", out / "density.csv",
        ]
    )
    print("\nmetrics.json:", json.loads((out / "metrics.json").read_text()))


if __name__ == "__main__":
    cli()
