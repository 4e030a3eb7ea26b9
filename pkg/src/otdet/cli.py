"""Command line: refine -> score -> eval, hyperparameter sweeps, synth data.

Exit codes: 0 on success, 2 for input or configuration errors, 3 when the
transport solver fails to converge.
"""

import os

# Cap BLAS thread pools before numpy loads so OTDET_THREADS bounds all
# internal parallelism (reduction order, hence output bytes, stays fixed
# for a fixed thread count).
_threads = os.environ.get("OTDET_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ.setdefault(_var, _threads)

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, otplan, sacr, scoring, synth
from .featstore import (
    FeatureMatrix,
    FeatureStoreError,
    ManifestError,
    labels_sidecar_path,
    manifest_sidecar_path,
    read_features,
    read_manifest,
    write_features,
    write_labels,
    write_manifest,
)
from .otplan import SinkhornConvergenceError
from .sacr import SacrConfig
from .scoring import ScoreConfig

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_NO_CONVERGENCE = 3

_INPUT_ERRORS = (FeatureStoreError, ManifestError, ValueError, OSError, RuntimeError)

_PATH_KEYS = (
    "test", "text", "views", "manifest", "ood", "ood_views", "ood_manifest",
    "out", "decisions", "density", "id", "joint",
)


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one command invocation: input/output paths,
    the scoring and refinement configurations, sweep grids and the seed.
    Remaining command-specific scalars live in ``options``."""

    command: str
    paths: dict
    score: ScoreConfig | None = None
    sacr: SacrConfig | None = None
    alphas: tuple = ()
    epsilons: tuple = ()
    batch_sizes: tuple = ()
    ks: tuple = ()
    seed: int = 0
    options: dict = field(default_factory=dict)

    def path(self, key: str) -> Path:
        value = self.paths.get(key)
        if value is None:
            raise ValueError(f"missing required option --{key.replace('_', '-')}")
        return Path(value)

    def optional_path(self, key: str) -> Path | None:
        value = self.paths.get(key)
        return None if value is None else Path(value)


def _parse_batch_size(value) -> int | None:
    if value is None or value == "all":
        return None
    size = int(value)
    if size < 1:
        raise ValueError(f"batch size must be >= 1 or 'all', got {value}")
    return size


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in str(text).split(",") if tok != ""]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in str(text).split(",") if tok != ""]


def _batch_list(text: str) -> list:
    return [tok if tok == "all" else int(tok) for tok in str(text).split(",") if tok != ""]


def _prepare_out(path: Path) -> Path:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _sample_ids(stem: str, n: int) -> list[str]:
    return [f"{stem}_{i}" for i in range(n)]


def _read_unit_features(path, what: str) -> FeatureMatrix:
    m = read_features(path)
    if not m.normalized:
        raise ValueError(f"{what} file {path} does not hold unit-normalized rows")
    return m


# ----------------------------------------------------------------- commands


def cmd_synth(rc: RunConfig) -> int:
    opt = rc.options
    spec = synth.SyntheticSpec(
        n_labels=opt["n_labels"],
        n_id=opt["n_id"],
        n_ood=opt["n_ood"],
        dim=opt["dim"],
        noise_sigma=opt["sigma"],
        ood_offset=opt["ood_offset"],
        seed=rc.seed,
        ood_clusters=opt["ood_clusters"],
        n_views=opt["n_views"],
        view_sigma=opt["view_sigma"],
        distractor_frac=opt["distractor_frac"],
    )
    data = synth.generate(spec)
    out = rc.path("out")
    out.mkdir(parents=True, exist_ok=True)

    write_features(data.text, out / "text.otdf")
    write_labels(data.labels, labels_sidecar_path(out / "text.otdf"))
    write_features(data.id_features, out / "id.otdf")
    write_features(data.ood_features, out / "ood.otdf")
    written = ["text.otdf", "text.labels.txt", "id.otdf", "ood.otdf"]
    if data.id_views is not None:
        for stem, views, manifest in (
            ("id_views", data.id_views, data.id_manifest),
            ("ood_views", data.ood_views, data.ood_manifest),
        ):
            write_features(views, out / f"{stem}.otdf")
            write_manifest(manifest, manifest_sidecar_path(out / f"{stem}.otdf"))
            written += [f"{stem}.otdf", f"{stem}.manifest.json"]
    print(f"synth: wrote {', '.join(written)} to {out}")
    return EXIT_OK


def cmd_refine(rc: RunConfig) -> int:
    views_path = rc.path("views")
    manifest_path = rc.optional_path("manifest") or manifest_sidecar_path(views_path)
    views = _read_unit_features(views_path, "views")
    originals = _read_unit_features(rc.path("test"), "originals")
    text = _read_unit_features(rc.path("text"), "text")
    manifest = read_manifest(manifest_path)

    refined, decisions = sacr.refine_all(views, originals, manifest, text, rc.sacr)
    out = _prepare_out(rc.path("out"))
    write_features(refined, out)
    decisions_path = rc.optional_path("decisions")
    if decisions_path:
        sacr.write_decisions(decisions, _prepare_out(decisions_path))
    fallbacks = sum(1 for d in decisions if d.fallback_used)
    print(f"refine: {refined.rows} samples -> {out} ({fallbacks} fallbacks)")
    return EXIT_OK


def cmd_score(rc: RunConfig) -> int:
    test_path = rc.path("test")
    test = _read_unit_features(test_path, "test")
    text = _read_unit_features(rc.path("text"), "text")
    ids = _sample_ids(test_path.stem, test.rows)
    joint_path = rc.optional_path("joint")
    if joint_path:
        other = _read_unit_features(joint_path, "joint")
        if other.dim != test.dim:
            raise ValueError(
                f"joint file dim {other.dim} does not match test dim {test.dim}"
            )
        test = FeatureMatrix(np.vstack([test.data, other.data]), normalized=True)
        ids += _sample_ids(joint_path.stem, other.rows)

    records = scoring.score_pipeline(test, text, rc.score, ids)
    out = _prepare_out(rc.path("out"))
    scoring.write_scores_csv(records, out)
    print(f"score: {len(records)} samples -> {out}")
    return EXIT_OK


def cmd_eval(rc: RunConfig) -> int:
    column = rc.options["score_column"]
    id_rows = scoring.read_scores_csv(rc.path("id"))
    ood_rows = scoring.read_scores_csv(rc.path("ood"))
    id_scores = scoring.score_column(id_rows, column)
    ood_scores = scoring.score_column(ood_rows, column)

    report, export = metrics.evaluate(id_scores, ood_scores, bins=rc.options["bins"])
    out = _prepare_out(rc.path("out"))
    density_path = rc.optional_path("density") or out.with_name("density.csv")
    metrics.write_metrics_json(report, out)
    metrics.write_density_csv(export, _prepare_out(density_path))
    print(
        f"eval[{column}]: fpr95={report.fpr95:.4f} auroc={report.auroc:.4f} "
        f"threshold={report.threshold:.6g} -> {out}"
    )
    return EXIT_OK


def _batched_ot_scores(features, full_cost, epsilon, batch_size, tol, max_iter):
    """Solve per consecutive batch on a precomputed cost matrix."""
    n = features.rows
    nu = otplan.DiscreteMeasure.uniform(full_cost.shape[1])
    s_sem = np.empty(n)
    s_dist = np.empty(n)
    for batch_index, sl in enumerate(scoring._batch_slices(n, batch_size)):
        cost = otplan.CostMatrix(full_cost.values[sl], full_cost.metric_tag)
        mu = otplan.DiscreteMeasure.uniform(cost.shape[0])
        try:
            plan = otplan.sinkhorn(cost, mu, nu, epsilon, tol, max_iter)
        except SinkhornConvergenceError as exc:
            raise scoring.BatchConvergenceError(batch_index, exc) from exc
        s_sem[sl] = scoring.semantic_score(plan)
        s_dist[sl] = scoring.distribution_score(plan, cost)
    return s_sem, s_dist


def cmd_sweep(rc: RunConfig) -> int:
    axis = rc.options["axis"]
    grid = {
        "alpha": rc.alphas,
        "epsilon": rc.epsilons,
        "batch": rc.batch_sizes,
        "k": rc.ks,
    }[axis]
    if not grid:
        flag = {"alpha": "alphas", "epsilon": "epsilons",
                "batch": "batch-sizes", "k": "ks"}[axis]
        raise ValueError(f"sweep over {axis!r} needs a nonempty --{flag} list")

    base = rc.score
    test = _read_unit_features(rc.path("test"), "test")
    ood = _read_unit_features(rc.path("ood"), "ood")
    text = _read_unit_features(rc.path("text"), "text")
    cost_fn = otplan.cosine_cost if base.metric == otplan.COSINE else otplan.l2_cost

    rows = []

    def emit(value, id_scores, ood_scores):
        fpr, _ = metrics.fpr_at_tpr(id_scores, ood_scores)
        auroc = metrics.auroc(id_scores, ood_scores)
        rows.append((axis, value, f"{fpr:.17g}", f"{auroc:.17g}", "ok"))

    def attempt(value, fn):
        try:
            fn()
        except (*_INPUT_ERRORS, SinkhornConvergenceError) as exc:
            rows.append((axis, value, "", "", f"error: {exc}"))

    def ot_scores(matrix, cost, cfg):
        return _batched_ot_scores(
            matrix, cost, cfg.epsilon, cfg.batch_size, cfg.tol, cfg.max_iter
        )

    if axis == "alpha":
        # one solve; recombining the two score vectors needs no re-solve
        parts = {
            name: ot_scores(m, cost_fn(m, text), base)
            for name, m in (("id", test), ("ood", ood))
        }
        for a in grid:
            attempt(a, lambda a=a: emit(
                a,
                scoring.combined_score(*parts["id"], a),
                scoring.combined_score(*parts["ood"], a),
            ))
    elif axis in ("epsilon", "batch"):
        # cost matrices are fixed; each grid point re-solves the plans only
        costs = {"id": cost_fn(test, text), "ood": cost_fn(ood, text)}
        for value in grid:
            def point(value=value):
                if axis == "epsilon":
                    cfg = dataclasses.replace(base, epsilon=float(value))
                else:
                    cfg = dataclasses.replace(base, batch_size=_parse_batch_size(value))
                id_sem, id_dist = ot_scores(test, costs["id"], cfg)
                ood_sem, ood_dist = ot_scores(ood, costs["ood"], cfg)
                emit(value, scoring.combined_score(id_sem, id_dist, base.alpha),
                     scoring.combined_score(ood_sem, ood_dist, base.alpha))
            attempt(value, point)
    else:  # k
        for key in ("views", "ood_views"):
            if rc.paths.get(key) is None:
                raise ValueError(f"sweep over k needs --{key.replace('_', '-')}")
        id_views = _read_unit_features(rc.path("views"), "views")
        ood_views = _read_unit_features(rc.path("ood_views"), "ood views")
        id_manifest = read_manifest(
            rc.optional_path("manifest") or manifest_sidecar_path(rc.path("views"))
        )
        ood_manifest = read_manifest(
            rc.optional_path("ood_manifest") or manifest_sidecar_path(rc.path("ood_views"))
        )
        for k in grid:
            def point(k=k):
                sc = dataclasses.replace(rc.sacr, k=k)
                rid, _ = sacr.refine_all(id_views, test, id_manifest, text, sc)
                rood, _ = sacr.refine_all(ood_views, ood, ood_manifest, text, sc)
                id_sem, id_dist = ot_scores(rid, cost_fn(rid, text), base)
                ood_sem, ood_dist = ot_scores(rood, cost_fn(rood, text), base)
                emit(k, scoring.combined_score(id_sem, id_dist, base.alpha),
                     scoring.combined_score(ood_sem, ood_dist, base.alpha))
            attempt(k, point)

    out = _prepare_out(rc.path("out"))
    with out.open("w", encoding="utf-8", newline="") as fh:
        fh.write("axis,value,fpr95,auroc,status\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
    failed = sum(1 for r in rows if r[4] != "ok")
    print(f"sweep[{axis}]: {len(rows)} points ({failed} failed) -> {out}")
    return EXIT_OK


# ------------------------------------------------------------ parser wiring

_DEFAULTS = {
    "synth": {
        "out": None,
        "n_labels": 10,
        "n_id": 500,
        "n_ood": 500,
        "dim": 64,
        "sigma": 0.1,
        "ood_offset": 1.0,
        "ood_clusters": None,
        "n_views": 0,
        "view_sigma": 0.05,
        "distractor_frac": 0.25,
        "seed": 0,
    },
    "refine": {
        "test": None,
        "views": None,
        "manifest": None,
        "text": None,
        "out": None,
        "decisions": None,
        "k": 20,
        "confidence": sacr.MAX_MARGIN,
        "no_label_consistency": False,
    },
    "score": {
        "test": None,
        "text": None,
        "out": None,
        "epsilon": 90.0,
        "alpha": 0.5,
        "batch_size": "all",
        "tau": 1.0,
        "mcm": False,
        "metric": otplan.COSINE,
        "joint": None,
        "shuffle": False,
        "seed": 0,
        "max_iter": 1000,
        "tol": 1e-6,
    },
    "eval": {
        "id": None,
        "ood": None,
        "score_column": "s_ot",
        "out": None,
        "density": None,
        "bins": 50,
    },
    "sweep": {
        "axis": None,
        "test": None,
        "ood": None,
        "text": None,
        "out": None,
        "alphas": [],
        "epsilons": [],
        "batch_sizes": [],
        "ks": [],
        "alpha": 0.5,
        "epsilon": 90.0,
        "batch_size": "all",
        "metric": otplan.COSINE,
        "tol": 1e-6,
        "max_iter": 1000,
        "views": None,
        "manifest": None,
        "ood_views": None,
        "ood_manifest": None,
        "k": 20,
        "confidence": sacr.MAX_MARGIN,
        "no_label_consistency": False,
    },
}

_REQUIRED = {
    "synth": ("out",),
    "refine": ("test", "views", "text", "out"),
    "score": ("test", "text", "out"),
    "eval": ("id", "ood", "out"),
    "sweep": ("axis", "test", "ood", "text", "out"),
}

_HANDLERS = {
    "synth": cmd_synth,
    "refine": cmd_refine,
    "score": cmd_score,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otdet",
        description="Zero-shot OOD detection with entropic optimal transport",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    S = argparse.SUPPRESS

    p = sub.add_parser("synth", help="generate seeded synthetic embeddings")
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--n-labels", type=int, default=S, dest="n_labels")
    p.add_argument("--n-id", type=int, default=S, dest="n_id")
    p.add_argument("--n-ood", type=int, default=S, dest="n_ood")
    p.add_argument("--dim", type=int, default=S)
    p.add_argument("--sigma", type=float, default=S, help="sample noise sigma")
    p.add_argument("--ood-offset", type=float, default=S, dest="ood_offset",
                   help="min angular distance (radians) of OOD centers from labels")
    p.add_argument("--ood-clusters", type=int, default=S, dest="ood_clusters")
    p.add_argument("--n-views", type=int, default=S, dest="n_views",
                   help="views per sample; 0 skips view bundles")
    p.add_argument("--view-sigma", type=float, default=S, dest="view_sigma")
    p.add_argument("--distractor-frac", type=float, default=S, dest="distractor_frac")
    p.add_argument("--seed", type=int, default=S)

    p = sub.add_parser("refine", help="fuse view bundles into refined features")
    p.add_argument("--test", default=S, help="originals OTDF (fallback features)")
    p.add_argument("--views", default=S, help="views OTDF")
    p.add_argument("--manifest", default=S, help="manifest JSON (default: views sidecar)")
    p.add_argument("--text", default=S, help="label features OTDF")
    p.add_argument("--out", default=S, help="refined OTDF path")
    p.add_argument("--decisions", default=S, help="optional per-sample decision report (JSONL)")
    p.add_argument("--k", type=int, default=S, help="views fused per sample")
    p.add_argument("--confidence", choices=sacr.CONFIDENCE_KINDS, default=S)
    p.add_argument("--no-label-consistency", action="store_true", default=S,
                   dest="no_label_consistency")

    p = sub.add_parser("score", help="compute OOD scores for a feature file")
    p.add_argument("--test", default=S, help="test features OTDF")
    p.add_argument("--text", default=S, help="label features OTDF")
    p.add_argument("--out", default=S, help="scores.csv path")
    p.add_argument("--epsilon", type=float, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--batch-size", default=S, dest="batch_size", help="int or 'all'")
    p.add_argument("--tau", type=float, default=S, help="baseline softmax temperature")
    p.add_argument("--mcm", action="store_true", default=S, help="emit the baseline column")
    p.add_argument("--metric", choices=(otplan.COSINE, otplan.L2), default=S)
    p.add_argument("--joint", default=S, help="second OTDF scored in the same transport problem")
    p.add_argument("--shuffle", action="store_true", default=S,
                   help="shuffle rows before batching (seeded)")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--max-iter", type=int, default=S, dest="max_iter")
    p.add_argument("--tol", type=float, default=S)

    p = sub.add_parser("eval", help="detection metrics from two score files")
    p.add_argument("--id", default=S, help="ID scores.csv")
    p.add_argument("--ood", default=S, help="OOD scores.csv")
    p.add_argument("--score-column", default=S, dest="score_column",
                   choices=("s_ot", "s_sem", "s_dist", "s_mcm"))
    p.add_argument("--out", default=S, help="metrics.json path")
    p.add_argument("--density", default=S, help="density.csv path (default: next to --out)")
    p.add_argument("--bins", type=int, default=S)

    p = sub.add_parser("sweep", help="grid over one hyperparameter axis")
    p.add_argument("--axis", choices=("alpha", "epsilon", "batch", "k"), default=S)
    p.add_argument("--test", default=S, help="ID features OTDF (originals for --axis k)")
    p.add_argument("--ood", default=S, help="OOD features OTDF (originals for --axis k)")
    p.add_argument("--text", default=S)
    p.add_argument("--out", default=S, help="sweep.csv path")
    p.add_argument("--alphas", type=_float_list, default=S)
    p.add_argument("--epsilons", type=_float_list, default=S)
    p.add_argument("--batch-sizes", type=_batch_list, default=S, dest="batch_sizes")
    p.add_argument("--ks", type=_int_list, default=S)
    p.add_argument("--alpha", type=float, default=S, help="fixed alpha for non-alpha axes")
    p.add_argument("--epsilon", type=float, default=S)
    p.add_argument("--batch-size", default=S, dest="batch_size")
    p.add_argument("--metric", choices=(otplan.COSINE, otplan.L2), default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--max-iter", type=int, default=S, dest="max_iter")
    p.add_argument("--views", default=S, help="ID views OTDF (--axis k)")
    p.add_argument("--manifest", default=S)
    p.add_argument("--ood-views", default=S, dest="ood_views")
    p.add_argument("--ood-manifest", default=S, dest="ood_manifest")
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--confidence", choices=sacr.CONFIDENCE_KINDS, default=S)
    p.add_argument("--no-label-consistency", action="store_true", default=S,
                   dest="no_label_consistency")

    for sp in sub.choices.values():
        sp.add_argument("--config", default=S,
                        help="JSON file of flag defaults; explicit flags win")
    return parser


def _resolve(command: str, args: argparse.Namespace) -> RunConfig:
    merged = dict(_DEFAULTS[command])
    explicit = {k: v for k, v in vars(args).items() if k != "command"}
    config_path = explicit.pop("config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{config_path}: not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValueError(f"{config_path}: config must be a JSON object")
        for key, value in loaded.items():
            if key not in merged:
                raise ValueError(f"{config_path}: unknown key {key!r} for command {command}")
            merged[key] = value
    merged.update(explicit)
    for name in _REQUIRED[command]:
        if merged.get(name) is None:
            raise ValueError(f"missing required option --{name.replace('_', '-')}")

    paths = {k: merged.pop(k) for k in _PATH_KEYS if k in merged}
    score = None
    if command in ("score", "sweep"):
        score = ScoreConfig(
            alpha=merged.pop("alpha"),
            epsilon=merged.pop("epsilon"),
            batch_size=_parse_batch_size(merged.pop("batch_size")),
            baseline_tau=merged.pop("tau", 1.0),
            with_mcm=merged.pop("mcm", False),
            metric=merged.pop("metric"),
            tol=merged.pop("tol"),
            max_iter=merged.pop("max_iter"),
            shuffle=merged.pop("shuffle", False),
            seed=merged.get("seed", 0),
        )
    sacr_cfg = None
    if command in ("refine", "sweep"):
        sacr_cfg = SacrConfig(
            k=merged.pop("k"),
            confidence=merged.pop("confidence"),
            require_label_consistency=not merged.pop("no_label_consistency"),
        )
    return RunConfig(
        command=command,
        paths=paths,
        score=score,
        sacr=sacr_cfg,
        alphas=tuple(merged.pop("alphas", ())),
        epsilons=tuple(merged.pop("epsilons", ())),
        batch_sizes=tuple(merged.pop("batch_sizes", ())),
        ks=tuple(merged.pop("ks", ())),
        seed=merged.pop("seed", 0),
        options=merged,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_INPUT_ERROR
    try:
        rc = _resolve(args.command, args)
        return _HANDLERS[args.command](rc)
    except SinkhornConvergenceError as exc:
        print(f"otdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except _INPUT_ERRORS as exc:
        print(f"otdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
