"""Seeded synthetic embedding generator for desk-scale validation.

Real embeddings place an image near its matching label direction on the
unit sphere; the generator mirrors that geometry. Label directions are
random unit vectors, ID samples are noisy copies of their label
direction, and OOD samples cluster around centers rejected until they
are at least ``ood_offset`` radians from every label direction. Optional
view bundles add per-sample noisy views, a fraction of which are pulled
toward a wrong label to give the refinement stage something to filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .featstore import FeatureMatrix, LabelSet, ManifestEntry, ViewBundleManifest

_MAX_REJECTION_ATTEMPTS = 10_000


@dataclass(frozen=True)
class SyntheticSpec:
    n_labels: int = 10
    n_id: int = 500
    n_ood: int = 500
    dim: int = 64
    noise_sigma: float = 0.1
    ood_offset: float = 1.0  # radians
    seed: int = 0
    ood_clusters: int | None = None  # None: one cluster per label count
    n_views: int = 0  # 0: skip view bundles
    view_sigma: float = 0.05
    distractor_frac: float = 0.25

    def __post_init__(self):
        if self.n_labels < 1 or self.n_id < 1 or self.n_ood < 1:
            raise ValueError("label and sample counts must be >= 1")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.noise_sigma < 0.0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.ood_offset < 0.0:
            raise ValueError(f"ood_offset must be >= 0, got {self.ood_offset}")
        if self.ood_clusters is not None and self.ood_clusters < 1:
            raise ValueError("ood_clusters must be >= 1")
        if self.n_views < 0:
            raise ValueError("n_views must be >= 0")
        if self.view_sigma < 0.0:
            raise ValueError("view_sigma must be >= 0")
        if not 0.0 <= self.distractor_frac <= 1.0:
            raise ValueError("distractor_frac must lie in [0, 1]")


@dataclass(frozen=True)
class SyntheticData:
    labels: LabelSet
    text: FeatureMatrix
    id_features: FeatureMatrix
    ood_features: FeatureMatrix
    id_views: FeatureMatrix | None = None
    id_manifest: ViewBundleManifest | None = None
    ood_views: FeatureMatrix | None = None
    ood_manifest: ViewBundleManifest | None = None


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _ood_centers(rng, label_dirs: np.ndarray, count: int, offset: float) -> np.ndarray:
    dim = label_dirs.shape[1]
    centers = np.empty((count, dim))
    for c in range(count):
        for _ in range(_MAX_REJECTION_ATTEMPTS):
            cand = _unit(rng.standard_normal(dim))
            angles = np.arccos(np.clip(label_dirs @ cand, -1.0, 1.0))
            if angles.min() > offset:
                centers[c] = cand
                break
        else:
            raise RuntimeError(
                f"could not place OOD center {c} after {_MAX_REJECTION_ATTEMPTS} draws; "
                f"ood_offset={offset} is too large for dim={dim}"
            )
    return centers


def _views_for(rng, samples, label_dirs, classes, n_views, sigma, distractor_frac, prefix):
    n, dim = samples.shape
    n_distract = int(round(distractor_frac * n_views))
    all_views = np.empty((n * n_views, dim), dtype=np.float64)
    entries = []
    n_labels = label_dirs.shape[0]
    for i in range(n):
        base = samples[i]
        block = rng.standard_normal((n_views, dim)) * sigma
        views = base[None, :] + block
        for j in range(min(n_distract, n_views)):
            if classes is not None and n_labels > 1:
                # any label except the sample's own class
                wrong = int(rng.integers(n_labels - 1))
                if wrong >= classes[i]:
                    wrong += 1
            else:
                wrong = int(rng.integers(n_labels))
            views[j] = 0.5 * (base + label_dirs[wrong]) + block[j]
        start = i * n_views
        all_views[start : start + n_views] = _unit(views)
        entries.append(
            ManifestEntry(
                sample_id=f"{prefix}_{i}",
                original_row=i,
                view_start=start,
                view_end=start + n_views,
            )
        )
    matrix = FeatureMatrix(all_views.astype(np.float32), normalized=True)
    return matrix, ViewBundleManifest(n_views=n_views, samples=tuple(entries))


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Generate the full synthetic dataset; byte-identical per seed."""
    rng = np.random.default_rng(spec.seed)

    label_dirs = _unit(rng.standard_normal((spec.n_labels, spec.dim)))
    names = tuple(f"class_{i:03d}" for i in range(spec.n_labels))
    labels = LabelSet(names)

    id_classes = np.arange(spec.n_id) % spec.n_labels
    id_samples = _unit(
        label_dirs[id_classes] + spec.noise_sigma * rng.standard_normal((spec.n_id, spec.dim))
    )

    n_clusters = spec.ood_clusters if spec.ood_clusters is not None else spec.n_labels
    centers = _ood_centers(rng, label_dirs, n_clusters, spec.ood_offset)
    ood_assign = np.arange(spec.n_ood) % n_clusters
    ood_samples = _unit(
        centers[ood_assign] + spec.noise_sigma * rng.standard_normal((spec.n_ood, spec.dim))
    )

    data = {
        "labels": labels,
        "text": FeatureMatrix(label_dirs.astype(np.float32), normalized=True),
        "id_features": FeatureMatrix(id_samples.astype(np.float32), normalized=True),
        "ood_features": FeatureMatrix(ood_samples.astype(np.float32), normalized=True),
    }
    if spec.n_views > 0:
        id_views, id_manifest = _views_for(
            rng, id_samples, label_dirs, id_classes,
            spec.n_views, spec.view_sigma, spec.distractor_frac, "id",
        )
        ood_views, ood_manifest = _views_for(
            rng, ood_samples, label_dirs, None,
            spec.n_views, spec.view_sigma, spec.distractor_frac, "ood",
        )
        data.update(
            id_views=id_views,
            id_manifest=id_manifest,
            ood_views=ood_views,
            ood_manifest=ood_manifest,
        )
    return SyntheticData(**data)
