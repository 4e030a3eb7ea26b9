"""Zero-shot OOD detection with entropic optimal transport over embeddings."""

from .featstore import (
    FeatureMatrix,
    LabelSet,
    ManifestEntry,
    ViewBundleManifest,
    l2_normalize,
    read_features,
    read_labels,
    read_manifest,
    write_features,
    write_labels,
    write_manifest,
)
from .otplan import (
    CostMatrix,
    DiscreteMeasure,
    SinkhornConvergenceError,
    TransportPlan,
    cosine_cost,
    l2_cost,
    plan_row_costs,
    plan_row_max,
    sinkhorn,
)
from .sacr import SacrConfig, ViewDecision, filter_views, fuse, margin, refine_all
from .scoring import (
    ScoreConfig,
    ScoreRecord,
    classify,
    combined_score,
    distribution_score,
    mcm_score,
    predict_labels,
    score_pipeline,
    semantic_score,
)
from .metrics import DensityExport, DetectionReport, auroc, density, evaluate, fpr_at_tpr
from .synth import SyntheticSpec, generate

__version__ = "0.1.0"
