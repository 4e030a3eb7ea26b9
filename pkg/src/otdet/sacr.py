"""Label-guided refinement of multi-view embeddings.

Each test sample arrives with a bundle of augmented-view features. Views
whose predicted label disagrees with the original image's prediction are
dropped, the top-k survivors by confidence are kept, and those are fused
into one refined feature by a margin-weighted normalized sum. The module
is parameter-free: nothing is trained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .featstore import FeatureMatrix, ViewBundleManifest

MAX_MARGIN = "max-margin"
MIN_MARGIN = "min-margin"
MIN_ENTROPY = "min-entropy"
CONFIDENCE_KINDS = (MAX_MARGIN, MIN_MARGIN, MIN_ENTROPY)


@dataclass(frozen=True)
class SacrConfig:
    k: int = 20
    confidence: str = MAX_MARGIN
    require_label_consistency: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.confidence not in CONFIDENCE_KINDS:
            raise ValueError(
                f"unknown confidence function {self.confidence!r}, "
                f"expected one of {CONFIDENCE_KINDS}"
            )


@dataclass(frozen=True)
class ViewDecision:
    """Selection record for one sample's view bundle.

    View indices are bundle-local (0-based within the sample's views).
    ``selected_confidences`` holds the ranking-confidence value of each
    selected view, parallel to ``selected_views``.
    """

    sample_id: str
    predicted_label: int
    kept_views: tuple[int, ...]
    selected_views: tuple[int, ...]
    selected_confidences: tuple[float, ...]
    fallback_used: bool


def margin(logits) -> float:
    """Difference between the largest and second-largest logit.

    With a single label the margin is undefined; we define it as the lone
    logit so degenerate one-class fixtures stay runnable.
    """
    a = np.asarray(logits, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("margin of empty logits")
    if a.size == 1:
        return float(a[0])
    top2 = np.partition(a, a.size - 2)[-2:]
    return float(top2[1] - top2[0])


def _margins(logits: np.ndarray) -> np.ndarray:
    """Row-wise margin for an N x K logit matrix."""
    if logits.shape[1] == 1:
        return logits[:, 0].astype(np.float64)
    part = np.partition(logits, logits.shape[1] - 2, axis=1)
    return (part[:, -1] - part[:, -2]).astype(np.float64)


def _neg_entropy(logits: np.ndarray) -> np.ndarray:
    """Negated softmax entropy per row; larger means more confident."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    plogp = np.where(p > 0.0, p * np.log(p), 0.0)
    return plogp.sum(axis=1)


def ranking_confidence(logits: np.ndarray, kind: str) -> np.ndarray:
    """Per-view selection key; views with the largest values are kept."""
    if kind == MAX_MARGIN:
        return _margins(logits)
    if kind == MIN_MARGIN:
        return -_margins(logits)
    if kind == MIN_ENTROPY:
        return _neg_entropy(logits)
    raise ValueError(f"unknown confidence function {kind!r}")


def filter_views(
    view_feats: np.ndarray,
    original_feat: np.ndarray,
    text_feats: np.ndarray,
    cfg: SacrConfig,
    sample_id: str = "",
) -> ViewDecision:
    """Label-consistency filter plus top-k confidence selection.

    Ties in the top-k ranking break toward the lower view index so the
    decision is deterministic.
    """
    views = np.asarray(view_feats, dtype=np.float64)
    original = np.asarray(original_feat, dtype=np.float64).ravel()
    text = np.asarray(text_feats, dtype=np.float64)
    if views.ndim != 2 or views.shape[0] < 1:
        raise ValueError("bundle must contain at least one view")
    if views.shape[1] != text.shape[1] or original.size != text.shape[1]:
        raise ValueError(
            f"dimension mismatch: views {views.shape[1]}, original {original.size}, "
            f"text {text.shape[1]}"
        )

    predicted = int(np.argmax(text @ original))
    view_logits = views @ text.T
    view_preds = np.argmax(view_logits, axis=1)

    if cfg.require_label_consistency:
        kept = np.flatnonzero(view_preds == predicted)
    else:
        kept = np.arange(views.shape[0])

    if kept.size == 0:
        return ViewDecision(
            sample_id=sample_id,
            predicted_label=predicted,
            kept_views=(),
            selected_views=(),
            selected_confidences=(),
            fallback_used=True,
        )

    conf = ranking_confidence(view_logits[kept], cfg.confidence)
    order = np.lexsort((kept, -conf))  # confidence desc, then view index asc
    chosen = order[: cfg.k]
    return ViewDecision(
        sample_id=sample_id,
        predicted_label=predicted,
        kept_views=tuple(int(i) for i in kept),
        selected_views=tuple(int(kept[i]) for i in chosen),
        selected_confidences=tuple(float(conf[i]) for i in chosen),
        fallback_used=False,
    )


def fuse(features: np.ndarray, confidences) -> np.ndarray:
    """Confidence-weighted sum of view features, L2-normalized.

    The output is invariant to positive rescaling of the weights. All-zero
    weights are rejected: they signal a degenerate fixture, and masking
    them with a uniform average would hide the problem.
    """
    feats = np.asarray(features, dtype=np.float64)
    w = np.asarray(confidences, dtype=np.float64).ravel()
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("fusion needs at least one selected view")
    if w.size != feats.shape[0]:
        raise ValueError(f"{feats.shape[0]} features but {w.size} confidences")
    if not (w > 0.0).any():
        raise ValueError("all fusion confidences are zero or negative")
    fused = w @ feats
    norm = float(np.linalg.norm(fused))
    if norm == 0.0:
        raise ValueError("fused feature has zero norm")
    return fused / norm


def refine_all(
    views: FeatureMatrix,
    originals: FeatureMatrix,
    manifest: ViewBundleManifest,
    text: FeatureMatrix,
    cfg: SacrConfig,
) -> tuple[FeatureMatrix, list[ViewDecision]]:
    """Run the refinement loop over every sample in the manifest.

    Output row order follows the manifest. Samples whose kept set is empty
    fall back to the original image feature unchanged. Fusion weights are
    the raw margin values of the selected views, whatever confidence
    function ranked them.
    """
    manifest.validate(views.rows, originals.rows)
    if not (views.normalized and originals.normalized and text.normalized):
        raise ValueError("refinement requires unit-normalized views, originals and text")
    text_f64 = text.data.astype(np.float64)
    refined = np.empty((len(manifest.samples), views.dim), dtype=np.float32)
    decisions: list[ViewDecision] = []
    for out_row, entry in enumerate(manifest.samples):
        bundle = views.data[entry.view_start : entry.view_end].astype(np.float64)
        original = originals.data[entry.original_row].astype(np.float64)
        decision = filter_views(bundle, original, text_f64, cfg, entry.sample_id)
        if decision.fallback_used:
            refined[out_row] = originals.data[entry.original_row]
        else:
            sel = np.array(decision.selected_views, dtype=np.intp)
            weights = _margins(bundle[sel] @ text_f64.T)
            refined[out_row] = fuse(bundle[sel], weights).astype(np.float32)
        decisions.append(decision)
    return FeatureMatrix(refined, normalized=True), decisions


def write_decisions(decisions, path) -> None:
    """One JSON record per line: id, predicted label, kept count, selection."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in decisions:
            fh.write(
                json.dumps(
                    {
                        "id": d.sample_id,
                        "predicted_label": d.predicted_label,
                        "kept": len(d.kept_views),
                        "selected": list(d.selected_views),
                        "fallback": d.fallback_used,
                    }
                )
                + "\n"
            )
