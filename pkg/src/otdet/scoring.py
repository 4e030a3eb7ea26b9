"""Per-sample OOD scores derived from the transport plan.

The semantic score of a sample is its largest transport mass; the
distribution score is one minus its transported cost; the combined score
is their convex blend. Scores are computed per batch of test rows, each
batch forming its own supply measure, so values are comparable only
within one batch configuration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .featstore import FeatureMatrix
from . import otplan
from .otplan import (
    CostMatrix,
    DiscreteMeasure,
    SinkhornConvergenceError,
    TransportPlan,
)

SCORES_HEADER = ("sample_id", "s_sem", "s_dist", "s_ot", "s_mcm", "predicted_label")

ID = "ID"
OOD = "OOD"


@dataclass(frozen=True)
class ScoreConfig:
    alpha: float = 0.5
    epsilon: float = 90.0
    batch_size: int | None = None  # None scores the whole input as one batch
    baseline_tau: float = 1.0
    with_mcm: bool = False
    metric: str = otplan.COSINE
    tol: float = 1e-6
    max_iter: int = 1000
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1 or None, got {self.batch_size}")
        if self.baseline_tau <= 0.0:
            raise ValueError(f"baseline_tau must be positive, got {self.baseline_tau}")


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    s_sem: float
    s_dist: float
    s_ot: float
    s_mcm: float | None
    predicted_label: int


class BatchConvergenceError(SinkhornConvergenceError):
    """Solver non-convergence tagged with the failing batch index."""

    def __init__(self, batch_index: int, cause: SinkhornConvergenceError):
        self.batch_index = batch_index
        super().__init__(cause.iterations, cause.marginal_error, cause.tol)
        self.args = (f"batch {batch_index}: {cause.args[0]}",)


def semantic_score(plan: TransportPlan) -> np.ndarray:
    """Largest transport mass per sample."""
    return otplan.plan_row_max(plan)


def distribution_score(plan: TransportPlan, cost: CostMatrix) -> np.ndarray:
    """One minus the per-sample transported cost."""
    return 1.0 - otplan.plan_row_costs(plan, cost)


def combined_score(s_sem: np.ndarray, s_dist: np.ndarray, alpha: float) -> np.ndarray:
    s_sem = np.asarray(s_sem, dtype=np.float64)
    s_dist = np.asarray(s_dist, dtype=np.float64)
    if s_sem.shape != s_dist.shape:
        raise ValueError(f"length mismatch: {s_sem.shape} vs {s_dist.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * s_sem + (1.0 - alpha) * s_dist


def _similarities(test: FeatureMatrix, text: FeatureMatrix) -> np.ndarray:
    if test.dim != text.dim:
        raise ValueError(f"dimension mismatch: test dim {test.dim} vs text dim {text.dim}")
    if not test.normalized or not text.normalized:
        raise ValueError("scores require unit-normalized inputs")
    return test.data.astype(np.float64) @ text.data.astype(np.float64).T


def mcm_score(test: FeatureMatrix, text: FeatureMatrix, tau: float = 1.0) -> np.ndarray:
    """Baseline: maximum temperature-scaled softmax over label similarities."""
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = _similarities(test, text) / tau
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).max(axis=1)


def predict_labels(test: FeatureMatrix, text: FeatureMatrix) -> np.ndarray:
    """Index of the most similar label per sample; ties pick the lowest index."""
    return np.argmax(_similarities(test, text), axis=1)


def classify(scores, threshold: float) -> list[str]:
    """Threshold rule: score >= threshold is ID, below is OOD."""
    return [ID if s >= threshold else OOD for s in np.asarray(scores, dtype=np.float64)]


def _batch_slices(n: int, batch_size: int | None):
    step = n if batch_size is None else batch_size
    return [slice(s, min(s + step, n)) for s in range(0, n, step)]


def score_pipeline(
    test: FeatureMatrix,
    text: FeatureMatrix,
    cfg: ScoreConfig,
    ids: list[str] | None = None,
) -> list[ScoreRecord]:
    """Score every test row against the label features.

    Rows are partitioned into consecutive batches (optionally shuffled
    with the configured seed); each batch is scored by its own transport
    problem with uniform marginals. Records come back in input order.
    """
    n = test.rows
    if ids is None:
        ids = [f"sample_{i}" for i in range(n)]
    if len(ids) != n:
        raise ValueError(f"{n} test rows but {len(ids)} sample ids")

    predicted = predict_labels(test, text)
    mcm = mcm_score(test, text, cfg.baseline_tau) if cfg.with_mcm else None

    if cfg.shuffle:
        order = np.random.default_rng(cfg.seed).permutation(n)
    else:
        order = np.arange(n)

    cost_fn = otplan.cosine_cost if cfg.metric == otplan.COSINE else otplan.l2_cost
    nu = DiscreteMeasure.uniform(text.rows)
    s_sem = np.empty(n)
    s_dist = np.empty(n)
    for batch_index, sl in enumerate(_batch_slices(n, cfg.batch_size)):
        rows = order[sl]
        batch = FeatureMatrix(test.data[rows], normalized=True)
        cost = cost_fn(batch, text)
        mu = DiscreteMeasure.uniform(batch.rows)
        try:
            plan = otplan.sinkhorn(cost, mu, nu, cfg.epsilon, cfg.tol, cfg.max_iter)
        except SinkhornConvergenceError as exc:
            raise BatchConvergenceError(batch_index, exc) from exc
        s_sem[rows] = semantic_score(plan)
        s_dist[rows] = distribution_score(plan, cost)

    s_ot = combined_score(s_sem, s_dist, cfg.alpha)
    return [
        ScoreRecord(
            sample_id=ids[i],
            s_sem=float(s_sem[i]),
            s_dist=float(s_dist[i]),
            s_ot=float(s_ot[i]),
            s_mcm=None if mcm is None else float(mcm[i]),
            predicted_label=int(predicted[i]),
        )
        for i in range(n)
    ]


def _fmt(x: float) -> str:
    # 17 significant digits: scores scale like 1/|X| and must survive a
    # write/read round trip without collapsing
    return f"{x:.17g}"


def write_scores_csv(records, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.sample_id,
                    _fmt(r.s_sem),
                    _fmt(r.s_dist),
                    _fmt(r.s_ot),
                    "" if r.s_mcm is None else _fmt(r.s_mcm),
                    r.predicted_label,
                ]
            )


def read_scores_csv(path) -> list[dict[str, str]]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if reader.fieldnames is None:
        raise ValueError(f"{path}: empty scores file")
    return rows


def score_column(rows: list[dict[str, str]], column: str) -> np.ndarray:
    """Extract one numeric column from parsed scores.csv rows."""
    if not rows:
        raise ValueError("no score rows")
    if column not in rows[0]:
        raise ValueError(f"column {column!r} not present in scores file")
    values = [r[column] for r in rows]
    if any(v == "" for v in values):
        raise ValueError(f"column {column!r} has empty entries")
    return np.array([float(v) for v in values])
