"""Detection metrics: FPR at fixed TPR, AUROC, and score densities.

Both metrics treat ID as the positive class and follow the inclusive
threshold rule (score >= threshold counts as positive). AUROC uses the
rank form with half credit for ties, so swapping the two score sets maps
the value to its complement exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DetectionReport:
    fpr95: float
    auroc: float
    threshold: float
    n_id: int
    n_ood: int


@dataclass(frozen=True)
class DensityExport:
    bin_edges: np.ndarray
    id_counts: np.ndarray
    ood_counts: np.ndarray


def _as_scores(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError(f"{name} score set is empty")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} score set contains NaN or infinite entries")
    return a


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> tuple[float, float]:
    """FPR on OOD at the largest threshold keeping ID TPR >= target.

    Returns ``(fpr, threshold)``. The threshold is always one of the ID
    score values; no interpolation between scores is performed.
    """
    ids = _as_scores(id_scores, "ID")
    oods = _as_scores(ood_scores, "OOD")
    if not 0.0 < tpr_target <= 1.0:
        raise ValueError(f"tpr_target must lie in (0, 1], got {tpr_target}")
    need = math.ceil(tpr_target * ids.size)
    threshold = float(np.sort(ids)[ids.size - need])
    fpr = float(np.count_nonzero(oods >= threshold)) / oods.size
    return fpr, threshold


def auroc(id_scores, ood_scores) -> float:
    """Probability an ID score outranks an OOD score, ties half-credited."""
    ids = _as_scores(id_scores, "ID")
    oods = _as_scores(ood_scores, "OOD")
    sorted_ood = np.sort(oods)
    lo = np.searchsorted(sorted_ood, ids, side="left")
    hi = np.searchsorted(sorted_ood, ids, side="right")
    wins = int(lo.sum())
    ties = int((hi - lo).sum())
    return (2 * wins + ties) / (2 * ids.size * oods.size)


def density(id_scores, ood_scores, bins: int = 50) -> DensityExport:
    """Histogram both score sets over shared equal-width bins.

    Edges span the min/max of the union; scores equal to the max land in
    the last bin. If every score is identical the export degenerates to a
    single unit-width bin around that value.
    """
    ids = _as_scores(id_scores, "ID")
    oods = _as_scores(ood_scores, "OOD")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    lo = min(ids.min(), oods.min())
    hi = max(ids.max(), oods.max())
    if lo == hi:
        edges = np.array([lo - 0.5, hi + 0.5])
    else:
        edges = np.linspace(lo, hi, bins + 1)
    id_counts, _ = np.histogram(ids, bins=edges)
    ood_counts, _ = np.histogram(oods, bins=edges)
    return DensityExport(bin_edges=edges, id_counts=id_counts, ood_counts=ood_counts)


def evaluate(id_scores, ood_scores, bins: int = 50) -> tuple[DetectionReport, DensityExport]:
    fpr, threshold = fpr_at_tpr(id_scores, ood_scores)
    report = DetectionReport(
        fpr95=fpr,
        auroc=auroc(id_scores, ood_scores),
        threshold=threshold,
        n_id=int(np.asarray(id_scores).size),
        n_ood=int(np.asarray(ood_scores).size),
    )
    return report, density(id_scores, ood_scores, bins)


def write_metrics_json(report: DetectionReport, path) -> None:
    doc = {
        "fpr95": report.fpr95,
        "auroc": report.auroc,
        "threshold": report.threshold,
        "n_id": report.n_id,
        "n_ood": report.n_ood,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_density_csv(export: DensityExport, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "id_count", "ood_count"])
        for i in range(export.id_counts.size):
            writer.writerow(
                [
                    f"{export.bin_edges[i]:.17g}",
                    f"{export.bin_edges[i + 1]:.17g}",
                    int(export.id_counts[i]),
                    int(export.ood_counts[i]),
                ]
            )
