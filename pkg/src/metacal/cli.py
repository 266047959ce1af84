"""Command-line surface: ingestion, preprocessing, calibration, scoring,
evaluation, and reporting.

Exit codes: 0 on success, 2 for validation errors (bad inputs, bad flags),
1 for unexpected internal errors.  When --seed is not given, the
METACAL_SEED environment variable is used as a fallback, then 0.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import io
from .core import (
    ExampleId,
    MetacalError,
    MetricSpec,
    PreferenceTarget,
    ScoreMatrix,
    TargetKind,
    Weighting,
    validate_alignment,
)
from .gbt import GbtConfig, GbtLoss, RankingPairs, calibrate_gbt
from .gp import GpConfig, LengthscalePolicy, calibrate_gp, select_top_k
from .harness import (
    TIE_POLICIES,
    GroupedScores,
    build_report,
    grouped_pairwise_accuracy,
)
from .objectives import ObjectiveKind
from .preprocess import PreprocessConfig, normalize_matrix
from .textmetrics import BUILTIN_METRICS, SegmentPair, builtin_specs, score_corpus

_OBJECTIVES = {
    "kendall": ObjectiveKind.KENDALL,
    "spearman": ObjectiveKind.SPEARMAN,
    "pearson": ObjectiveKind.PEARSON,
    "pairwise": ObjectiveKind.PAIRWISE_ACCURACY,
}
_WEIGHTINGS = {w.value: w for w in Weighting}
_LOSSES = {l.value: l for l in GbtLoss}


@dataclass(frozen=True)
class RunConfig:
    """Validated calibrate-command settings."""

    method: str
    objective: ObjectiveKind
    weighting: Weighting
    top_k: int | None
    prune_iterations: int | None
    seed: int

    def __post_init__(self) -> None:
        if self.method not in ("gp", "gbt"):
            raise MetacalError(f"unknown method {self.method!r}")
        if self.prune_iterations is not None and self.method != "gbt":
            raise MetacalError("--prune-iterations is only valid with --method gbt")
        if self.weighting is not Weighting.LINEAR and self.method != "gp":
            raise MetacalError("--weighting is only valid with --method gp")
        if self.top_k is not None and self.top_k < 1:
            raise MetacalError("--top-k must be >= 1")


def _default_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("METACAL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise MetacalError(f"METACAL_SEED must be an integer, got {env!r}") from None
    return 0


def _load_corpus(path: str) -> tuple[list[ExampleId], list[SegmentPair], dict[ExampleId, float] | None]:
    ids: list[ExampleId] = []
    pairs: list[SegmentPair] = []
    zs: dict[ExampleId, float] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise io.ParseError(1, "empty corpus file") from None
        needed = [*io.ID_COLUMNS, "hypothesis", "reference"]
        missing = [c for c in needed if c not in header]
        if missing:
            raise io.HeaderMismatch(f"corpus missing columns: {', '.join(missing)}")
        col = {name: header.index(name) for name in header}
        has_human = io.HUMAN_COLUMN in header
        for line, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise io.ParseError(line, f"{len(record)} fields, header has {len(header)}")
            eid = ExampleId(*(record[col[c]] for c in io.ID_COLUMNS))
            ids.append(eid)
            pairs.append(
                SegmentPair(record[col["hypothesis"]], record[col["reference"]])
            )
            if has_human:
                zs[eid] = io._parse_value(record[col[io.HUMAN_COLUMN]], line, io.HUMAN_COLUMN)
    return ids, pairs, (zs if has_human else None)


def _cmd_basemetrics(args: argparse.Namespace) -> int:
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    builtin_specs(names)
    ids, pairs, zs = _load_corpus(args.input)
    matrix = score_corpus(pairs, names, ids)
    target = PreferenceTarget.from_pointwise(zs) if zs is not None else None
    io.save_scores_csv(matrix, args.output, target)
    print(f"scored {matrix.n_examples} examples with {len(names)} metrics -> {args.output}")
    return 0


def _require_target(target: PreferenceTarget | None, path: str) -> PreferenceTarget:
    if target is None:
        raise io.HeaderMismatch(f"{path} has no human column; targets are required")
    return target


def _cmd_calibrate(args: argparse.Namespace) -> int:
    seed = _default_seed(args.seed)
    run = RunConfig(
        method=args.method,
        objective=_OBJECTIVES[args.objective],
        weighting=_WEIGHTINGS[args.weighting],
        top_k=args.top_k,
        prune_iterations=args.prune_iterations,
        seed=seed,
    )
    specs = io.load_specs(args.specs)
    matrix, target = io.load_scores(args.scores, args.format, specs)
    target = _require_target(target, args.scores)
    validate_alignment(matrix, target)

    if run.top_k is not None:
        normalized = normalize_matrix(matrix, PreprocessConfig(specs))
        keep = select_top_k(normalized, target, run.objective, run.top_k)
        matrix = matrix.take_columns(keep)
        specs = tuple(specs[i] for i in keep)

    normalized = normalize_matrix(matrix, PreprocessConfig(specs))
    if run.method == "gp":
        config = GpConfig(
            init_points=args.init_points,
            n_iter=args.n_iter,
            kappa=args.kappa,
            lengthscale_policy=(
                LengthscalePolicy.MAXIMIZE_MARGINAL_LIKELIHOOD
                if args.fit_lengthscale
                else LengthscalePolicy.FIXED_ONE
            ),
            seed=seed,
            weighting=run.weighting,
            sparsity_epsilon=args.sparsity_epsilon,
        )
        model = calibrate_gp(normalized, target, run.objective, config, specs=specs)
    else:
        loss = _LOSSES[args.loss] if args.loss else (
            GbtLoss.PAIRWISE_RANK
            if target.kind is TargetKind.PAIRWISE
            else GbtLoss.SQUARED_ERROR
        )
        config = GbtConfig(
            n_estimators_low=args.n_estimators_low,
            n_estimators_high=args.n_estimators_high,
            n_estimators_step=args.n_estimators_step,
            loss=loss,
            max_depth=args.max_depth,
            learning_rate=args.learning_rate,
            reg_lambda=args.reg_lambda,
            gamma=args.gamma,
            cv_folds=args.cv_folds,
            seed=seed,
        )
        if target.kind is TargetKind.PAIRWISE:
            gbt_target: np.ndarray | RankingPairs = RankingPairs.stacked(
                len(target.pairwise), [p.group_id for p in target.pairwise]
            )
        else:
            gbt_target = np.asarray(
                [target.pointwise[eid] for eid in normalized.example_ids]
            )
        model, _ = calibrate_gbt(
            normalized.values,
            gbt_target,
            run.objective,
            config,
            specs,
            prune_iterations=run.prune_iterations,
        )
    io.save_model(model, args.output)
    print(f"calibrated {run.method} model over {len(model.metric_specs)} metrics -> {args.output}")
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    model = io.load_model(args.model)
    matrix, _ = io.load_scores(args.scores, args.format, model.metric_specs)
    scores = io.score_with_model(model, matrix)
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*io.ID_COLUMNS, "meta_score"])
        for eid, value in zip(matrix.example_ids, scores):
            writer.writerow([*eid, io.format_float(value)])
    print(f"scored {matrix.n_examples} examples -> {args.output}")
    return 0


def _metric_column_scores(
    matrix: ScoreMatrix, name: str
) -> np.ndarray:
    if name not in matrix.metric_names:
        raise io.ColumnMismatch(f"metric {name!r} not in score file")
    return matrix.column(name)


def _cmd_evaluate(args: argparse.Namespace) -> int:
    if (args.model is None) == (args.metric is None):
        raise MetacalError("pass exactly one of --model or --metric")
    if args.model is not None:
        model = io.load_model(args.model)
        specs: tuple[MetricSpec, ...] = model.metric_specs
    else:
        # A raw column evaluation needs no range metadata; the spec is a
        # placeholder used only to select the column.
        specs = (MetricSpec(args.metric, 0.0, 1.0, True),)
        model = None
    matrix, target = io.load_scores(args.scores, args.format, specs)
    if model is not None:
        metric_scores = io.score_with_model(model, matrix)
    else:
        metric_scores = _metric_column_scores(matrix, args.metric)

    if args.format == "jsonl":
        assert target is not None and target.pairwise is not None
        pairs = [
            (pair.category, float(metric_scores[2 * i]), float(metric_scores[2 * i + 1]))
            for i, pair in enumerate(target.pairwise)
        ]
        report = grouped_pairwise_accuracy(pairs)
    else:
        target = _require_target(target, args.scores)
        grouped = GroupedScores.from_examples(
            (eid, float(s), target.pointwise[eid])
            for eid, s in zip(matrix.example_ids, metric_scores)
        )
        report = build_report(grouped, tie_policy=args.tie_policy)
    obj = io.report_to_obj(report)
    io.write_json(obj, args.output)
    if report.avg_corr is not None:
        print(f"avg_corr (unweighted): {io.format_float(report.avg_corr)} -> {args.output}")
    else:
        print(f"overall accuracy: {io.format_float(report.overall_accuracy)} -> {args.output}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    model = io.load_model(args.model)
    text, obj = io.report_model(model, epsilon=args.sparsity_epsilon)
    print(text)
    if args.output:
        io.write_json(obj, args.output)
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    seed = _default_seed(args.seed)
    specs = io.load_specs(args.specs)
    matrix, target = io.load_scores(args.scores, args.format, specs)
    (train_m, train_t), (test_m, test_t) = io.split_matrix(
        matrix, target, fraction=args.train_fraction, seed=seed
    )
    if args.format == "jsonl":
        io.save_scores_jsonl(train_t, args.train_output, specs)
        io.save_scores_jsonl(test_t, args.test_output, specs)
    else:
        io.save_scores_csv(train_m, args.train_output, train_t)
        io.save_scores_csv(test_m, args.test_output, test_t)
    print(
        f"split {matrix.n_examples if args.format == 'csv' else len(target.pairwise)} "
        f"-> train {args.train_output}, test {args.test_output}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metacal",
        description="Calibrate a combination of evaluation metrics against human preferences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("basemetrics", help="score a text corpus with built-in metrics")
    p.add_argument("--input", required=True, help="corpus CSV: ids, hypothesis, reference[, human]")
    p.add_argument("--output", required=True, help="score CSV to write")
    p.add_argument(
        "--metrics",
        default=",".join(BUILTIN_METRICS),
        help="comma-separated subset of: " + ", ".join(BUILTIN_METRICS),
    )
    p.set_defaults(func=_cmd_basemetrics)

    p = sub.add_parser("calibrate", help="learn a calibrated model from scores + targets")
    p.add_argument("--scores", required=True)
    p.add_argument("--specs", required=True, help="metric spec JSON file")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--method", choices=("gp", "gbt"), default="gp")
    p.add_argument("--objective", choices=tuple(_OBJECTIVES), default="kendall")
    p.add_argument("--weighting", choices=tuple(_WEIGHTINGS), default="linear")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--prune-iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", required=True)
    p.add_argument("--init-points", type=int, default=5)
    p.add_argument("--n-iter", type=int, default=100)
    p.add_argument("--kappa", type=float, default=2.576)
    p.add_argument("--fit-lengthscale", action="store_true",
                   help="refit the GP lengthscale by marginal likelihood")
    p.add_argument("--sparsity-epsilon", type=float, default=0.01)
    p.add_argument("--loss", choices=tuple(_LOSSES), default=None,
                   help="gbt loss (default: squarederror, or pairwise for jsonl data)")
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--reg-lambda", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--n-estimators-low", type=int, default=100)
    p.add_argument("--n-estimators-high", type=int, default=1000)
    p.add_argument("--n-estimators-step", type=int, default=100)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("score", help="apply a calibrated model to a score file")
    p.add_argument("--model", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("evaluate", help="meta-evaluation statistics against human scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--model", default=None)
    p.add_argument("--metric", default=None, help="evaluate a raw score column instead of a model")
    p.add_argument("--tie-policy", choices=TIE_POLICIES, default="strict")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="weights / feature-importance report for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--sparsity-epsilon", type=float, default=0.01)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("split", help="seeded train/test split of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--specs", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--train-fraction", type=float, default=0.30)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train-output", required=True)
    p.add_argument("--test-output", required=True)
    p.set_defaults(func=_cmd_split)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MetacalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
