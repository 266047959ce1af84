"""File formats, model persistence, and model application.

CSV carries tabular scores, JSONL carries pairwise preference records, and
JSON carries metric specs, models, and reports.  Every numeric value in an
output file is serialized with 17 significant digits, which round-trips
float64 exactly and makes repeated runs byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from typing import Any, Sequence

import numpy as np

from .core import (
    CalibratedModel,
    ExampleId,
    MetacalError,
    MetricSpec,
    ModelKind,
    PreferencePair,
    PreferenceTarget,
    ScoreMatrix,
    TargetKind,
    Weighting,
)
from .gbt import Leaf, Node, Split, TreeEnsemble
from .gp import expand_matrix, expanded_feature_names
from .harness import EvalReport
from .preprocess import normalize_values

MODEL_SCHEMA_VERSION = 1
ID_COLUMNS = ("dataset", "system", "segment")
HUMAN_COLUMN = "human"


class ParseError(MetacalError):
    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"line {line}: {reason}")
        self.line = line


class HeaderMismatch(MetacalError):
    """The file header does not cover the declared metric names."""


class NonFiniteValue(MetacalError):
    def __init__(self, line: int, column: str) -> None:
        super().__init__(f"line {line}: non-finite value in column {column!r}")
        self.line = line


class SchemaVersionUnsupported(MetacalError):
    pass


class MalformedModel(MetacalError):
    pass


class ColumnMismatch(MetacalError):
    """Matrix columns do not cover the model's metric specs."""


# ---------------------------------------------------------------------------
# Canonical JSON with fixed float formatting
# ---------------------------------------------------------------------------


def format_float(value: float) -> str:
    if not math.isfinite(value):
        raise MetacalError(f"cannot serialize non-finite value {value!r}")
    return format(float(value), ".17g")


def _emit(obj: Any, parts: list[str], indent: int) -> None:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            parts.append("{}")
            return
        parts.append("{\n")
        for i, (key, value) in enumerate(obj.items()):
            parts.append(f'{pad}  {json.dumps(str(key))}: ')
            _emit(value, parts, indent + 1)
            parts.append(",\n" if i < len(obj) - 1 else "\n")
        parts.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            parts.append("[]")
            return
        parts.append("[\n")
        for i, value in enumerate(obj):
            parts.append(pad + "  ")
            _emit(value, parts, indent + 1)
            parts.append(",\n" if i < len(obj) - 1 else "\n")
        parts.append(pad + "]")
    elif isinstance(obj, bool):
        parts.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(format_float(float(obj)))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif obj is None:
        parts.append("null")
    else:
        raise MetacalError(f"cannot serialize {type(obj).__name__}")


def dumps_canonical(obj: Any) -> str:
    parts: list[str] = []
    _emit(obj, parts, 0)
    parts.append("\n")
    return "".join(parts)


def dumps_compact(obj: Any) -> str:
    """Single-line variant of the canonical encoding (for JSONL records)."""
    if isinstance(obj, dict):
        inner = ", ".join(
            f"{json.dumps(str(k))}: {dumps_compact(v)}" for k, v in obj.items()
        )
        return "{" + inner + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_compact(v) for v in obj) + "]"
    parts: list[str] = []
    _emit(obj, parts, 0)
    return "".join(parts)


def write_json(obj: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(obj))


# ---------------------------------------------------------------------------
# Metric spec files
# ---------------------------------------------------------------------------


def specs_to_obj(specs: Sequence[MetricSpec]) -> list[dict]:
    return [
        {
            "name": s.name,
            "min": float(s.min),
            "max": float(s.max),
            "higher_is_better": s.higher_is_better,
        }
        for s in specs
    ]


def specs_from_obj(obj: Any) -> tuple[MetricSpec, ...]:
    if not isinstance(obj, list) or not obj:
        raise MetacalError("metric spec file must be a non-empty JSON array")
    specs = []
    for entry in obj:
        try:
            specs.append(
                MetricSpec(
                    name=str(entry["name"]),
                    min=float(entry["min"]),
                    max=float(entry["max"]),
                    higher_is_better=bool(entry["higher_is_better"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MetacalError(f"bad metric spec entry {entry!r}: {exc}") from exc
    return tuple(specs)


def load_specs(path: str) -> tuple[MetricSpec, ...]:
    with open(path, encoding="utf-8") as fh:
        return specs_from_obj(json.load(fh))


def save_specs(specs: Sequence[MetricSpec], path: str) -> None:
    write_json(specs_to_obj(specs), path)


# ---------------------------------------------------------------------------
# Score ingestion
# ---------------------------------------------------------------------------


def _parse_value(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise ParseError(line, f"cannot parse {text!r} in column {column!r}") from exc
    if not math.isfinite(value):
        raise NonFiniteValue(line, column)
    return value


def load_scores_csv(
    path: str, specs: Sequence[MetricSpec]
) -> tuple[ScoreMatrix, PreferenceTarget | None]:
    """Read a score table: id columns, one column per metric, optional human.

    Extra columns are ignored so a wide score file can serve narrower metric
    subsets.  Returns a pointwise target when the human column is present.
    """
    names = [s.name for s in specs]
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "empty file") from None
        missing = [c for c in (*ID_COLUMNS, *names) if c not in header]
        if missing:
            raise HeaderMismatch(f"missing columns: {', '.join(missing)}")
        col = {name: header.index(name) for name in header}
        has_human = HUMAN_COLUMN in header

        ids: list[ExampleId] = []
        rows: list[list[float]] = []
        zs: dict[ExampleId, float] = {}
        for line, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise ParseError(line, f"{len(record)} fields, header has {len(header)}")
            eid = ExampleId(*(record[col[c]] for c in ID_COLUMNS))
            ids.append(eid)
            rows.append([_parse_value(record[col[m]], line, m) for m in names])
            if has_human:
                zs[eid] = _parse_value(record[col[HUMAN_COLUMN]], line, HUMAN_COLUMN)
    matrix = ScoreMatrix(tuple(names), tuple(ids), np.asarray(rows, dtype=np.float64).reshape(len(ids), len(names)))
    target = PreferenceTarget.from_pointwise(zs) if has_human else None
    return matrix, target


def save_scores_csv(
    matrix: ScoreMatrix, path: str, target: PreferenceTarget | None = None
) -> None:
    header = [*ID_COLUMNS, *matrix.metric_names]
    zs = None
    if target is not None:
        if target.kind is not TargetKind.POINTWISE:
            raise MetacalError("CSV score files carry pointwise targets only")
        zs = target.pointwise
        header.append(HUMAN_COLUMN)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for eid, row in zip(matrix.example_ids, matrix.values):
            record = [*eid, *(format_float(v) for v in row)]
            if zs is not None:
                if eid not in zs:
                    raise MetacalError(f"no human score for {eid!r}")
                record.append(format_float(zs[eid]))
            writer.writerow(record)


def load_scores_jsonl(
    path: str, specs: Sequence[MetricSpec]
) -> tuple[ScoreMatrix, PreferenceTarget]:
    """Read pairwise preference records:

        {"group": ..., "category": ..., "chosen": {metric: value},
         "rejected": {metric: value}}

    Returns the stacked member matrix (chosen at row 2i, rejected at 2i+1)
    and the pairwise target.
    """
    names = [s.name for s in specs]
    pairs: list[PreferencePair] = []
    ids: list[ExampleId] = []
    rows: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        for line, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(line, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict) or "chosen" not in record or "rejected" not in record:
                raise ParseError(line, "record needs 'chosen' and 'rejected' objects")
            group = str(record.get("group", line - 1))
            category = str(record.get("category", "-"))
            members = []
            for side in ("chosen", "rejected"):
                scores = record[side]
                if not isinstance(scores, dict):
                    raise ParseError(line, f"{side!r} must be an object of metric scores")
                missing = [m for m in names if m not in scores]
                if missing:
                    raise HeaderMismatch(
                        f"line {line}: {side} record missing metrics: {', '.join(missing)}"
                    )
                members.append([_parse_value(str(scores[m]), line, m) for m in names])
            pair_index = len(pairs)
            pairs.append(
                PreferencePair(
                    group_id=group,
                    chosen_scores=tuple(members[0]),
                    rejected_scores=tuple(members[1]),
                    category=category,
                )
            )
            ids.append(ExampleId("-", group, f"{pair_index}:chosen"))
            ids.append(ExampleId("-", group, f"{pair_index}:rejected"))
            rows.extend(members)
    if not pairs:
        raise ParseError(1, "no pairwise records")
    matrix = ScoreMatrix(tuple(names), tuple(ids), np.asarray(rows, dtype=np.float64))
    return matrix, PreferenceTarget.from_pairs(pairs)


def save_scores_jsonl(target: PreferenceTarget, path: str, specs: Sequence[MetricSpec]) -> None:
    if target.kind is not TargetKind.PAIRWISE:
        raise MetacalError("JSONL score files carry pairwise targets only")
    names = [s.name for s in specs]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in target.pairwise:
            record = {
                "group": pair.group_id,
                "category": pair.category,
                "chosen": dict(zip(names, pair.chosen_scores)),
                "rejected": dict(zip(names, pair.rejected_scores)),
            }
            fh.write(dumps_compact(record) + "\n")


def load_scores(
    path: str, fmt: str, specs: Sequence[MetricSpec]
) -> tuple[ScoreMatrix, PreferenceTarget | None]:
    if fmt == "csv":
        return load_scores_csv(path, specs)
    if fmt == "jsonl":
        return load_scores_jsonl(path, specs)
    raise MetacalError(f"unknown score format {fmt!r}")


# ---------------------------------------------------------------------------
# Model persistence
# ---------------------------------------------------------------------------


def _node_to_obj(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"value": float(node.value)}
    return {
        "feature": int(node.feature),
        "threshold": float(node.threshold),
        "gain": float(node.gain),
        "left": _node_to_obj(node.left),
        "right": _node_to_obj(node.right),
    }


def _node_from_obj(obj: Any) -> Node:
    if not isinstance(obj, dict):
        raise MalformedModel(f"tree node must be an object, got {type(obj).__name__}")
    if "value" in obj:
        if set(obj) != {"value"}:
            raise MalformedModel(f"leaf with unexpected keys: {sorted(obj)}")
        return Leaf(value=float(obj["value"]))
    expected = {"feature", "threshold", "gain", "left", "right"}
    if set(obj) != expected:
        raise MalformedModel(f"split with unexpected keys: {sorted(obj)}")
    return Split(
        feature=int(obj["feature"]),
        threshold=float(obj["threshold"]),
        gain=float(obj["gain"]),
        left=_node_from_obj(obj["left"]),
        right=_node_from_obj(obj["right"]),
    )


def model_to_obj(model: CalibratedModel) -> dict:
    obj: dict[str, Any] = {
        "version": model.version,
        "kind": model.kind.value,
        "metrics": specs_to_obj(model.metric_specs),
    }
    if model.kind is ModelKind.LINEAR:
        obj["weighting"] = model.weighting.value
        obj["weights"] = [float(w) for w in model.weights]
    else:
        obj["trees"] = [_node_to_obj(t) for t in model.trees.trees]
        obj["base_score"] = float(model.base_score)
        obj["learning_rate"] = float(model.trees.learning_rate)
    obj["objective_used"] = model.objective_used
    obj["seed"] = model.seed
    return obj


_LINEAR_KEYS = {"version", "kind", "metrics", "weighting", "weights", "objective_used", "seed"}
_GBT_KEYS = {"version", "kind", "metrics", "trees", "base_score", "learning_rate", "objective_used", "seed"}


def model_from_obj(obj: Any) -> CalibratedModel:
    if not isinstance(obj, dict):
        raise MalformedModel("model file must hold a JSON object")
    version = obj.get("version")
    if version != MODEL_SCHEMA_VERSION:
        raise SchemaVersionUnsupported(f"unsupported model schema version {version!r}")
    kind = obj.get("kind")
    if kind not in ("linear", "gbt"):
        raise MalformedModel(f"unknown model kind {kind!r}")
    allowed = _LINEAR_KEYS if kind == "linear" else _GBT_KEYS
    unknown = set(obj) - allowed
    if unknown:
        raise MalformedModel(f"unknown model keys: {sorted(unknown)}")
    missing = allowed - set(obj)
    if missing:
        raise MalformedModel(f"missing model keys: {sorted(missing)}")
    try:
        specs = specs_from_obj(obj["metrics"])
        if kind == "linear":
            return CalibratedModel(
                kind=ModelKind.LINEAR,
                metric_specs=specs,
                objective_used=str(obj["objective_used"]),
                seed=int(obj["seed"]),
                version=int(version),
                weighting=Weighting(obj["weighting"]),
                weights=tuple(float(w) for w in obj["weights"]),
            )
        ensemble = TreeEnsemble(
            trees=tuple(_node_from_obj(t) for t in obj["trees"]),
            base_score=float(obj["base_score"]),
            learning_rate=float(obj["learning_rate"]),
            feature_names=tuple(s.name for s in specs),
        )
        return CalibratedModel(
            kind=ModelKind.GBT,
            metric_specs=specs,
            objective_used=str(obj["objective_used"]),
            seed=int(obj["seed"]),
            version=int(version),
            trees=ensemble,
            base_score=float(obj["base_score"]),
        )
    except MetacalError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModel(f"bad model payload: {exc}") from exc


def save_model(model: CalibratedModel, path: str) -> None:
    write_json(model_to_obj(model), path)


def load_model(path: str) -> CalibratedModel:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedModel(f"invalid JSON: {exc.msg}") from exc
    return model_from_obj(obj)


# ---------------------------------------------------------------------------
# Scoring and splitting
# ---------------------------------------------------------------------------


def score_with_model(model: CalibratedModel, matrix: ScoreMatrix) -> np.ndarray:
    """Meta-score every matrix row: select the model's columns by name,
    normalize through its specs, expand features, apply weights or trees."""
    try:
        order = [matrix.metric_names.index(s.name) for s in model.metric_specs]
    except ValueError:
        wanted = set(model.metric_names)
        missing = sorted(wanted - set(matrix.metric_names))
        raise ColumnMismatch(f"matrix lacks model metrics: {', '.join(missing)}") from None
    raw = matrix.values[:, order]
    normalized = normalize_values(raw, model.metric_specs)
    if model.kind is ModelKind.LINEAR:
        features = expand_matrix(normalized, model.weighting)
        return features @ np.asarray(model.weights)
    return model.trees.predict(normalized)


def split_train_test(
    rows: Sequence, fraction: float = 0.30, seed: int = 0
) -> tuple[list, list]:
    """Seeded shuffle-then-split; the train side takes floor(fraction * n)."""
    if not 0.0 < fraction < 1.0:
        raise MetacalError(f"train fraction must be in (0, 1), got {fraction}")
    items = list(rows)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    n_train = int(math.floor(fraction * len(items)))
    train_idx = sorted(order[:n_train].tolist())
    test_idx = sorted(order[n_train:].tolist())
    return [items[i] for i in train_idx], [items[i] for i in test_idx]


def split_matrix(
    matrix: ScoreMatrix,
    target: PreferenceTarget | None,
    fraction: float = 0.30,
    seed: int = 0,
) -> tuple[
    tuple[ScoreMatrix, PreferenceTarget | None],
    tuple[ScoreMatrix, PreferenceTarget | None],
]:
    """Split a score matrix (and its target) by example; pairwise data is
    split by pair so members stay together."""
    if target is not None and target.kind is TargetKind.PAIRWISE:
        train_pairs, test_pairs = split_train_test(
            list(range(len(target.pairwise))), fraction, seed
        )

        def subset(pair_ids: list[int]):
            rows = [r for p in pair_ids for r in (2 * p, 2 * p + 1)]
            sub_target = PreferenceTarget.from_pairs(
                target.pairwise[p] for p in pair_ids
            )
            return matrix.take_rows(rows), sub_target

        return subset(train_pairs), subset(test_pairs)

    train_rows, test_rows = split_train_test(range(matrix.n_examples), fraction, seed)

    def subset_rows(rows: list[int]):
        sub = matrix.take_rows(rows)
        if target is None:
            return sub, None
        sub_target = PreferenceTarget.from_pointwise(
            {eid: target.pointwise[eid] for eid in sub.example_ids}
        )
        return sub, sub_target

    return subset_rows(train_rows), subset_rows(test_rows)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def report_model(model: CalibratedModel, epsilon: float = 0.01) -> tuple[str, dict]:
    """Human-readable text plus a JSON-ready dict of weights or importances.

    Linear models list every stored weight and flag those below `epsilon` as
    dropped; tree models list total-gain importances, largest first.
    """
    from .gbt import feature_importance

    if model.kind is ModelKind.LINEAR:
        names = expanded_feature_names(model.metric_names, model.weighting)
        weights = dict(zip(names, model.weights))
        dropped = [n for n, w in weights.items() if abs(w) < epsilon]
        obj = {
            "kind": "linear",
            "weighting": model.weighting.value,
            "objective_used": model.objective_used,
            "seed": model.seed,
            "sparsity_epsilon": float(epsilon),
            "weights": {n: float(w) for n, w in weights.items()},
            "dropped": dropped,
        }
        lines = [f"linear model ({model.weighting.value} weighting)"]
        for name, weight in weights.items():
            flag = "  [dropped]" if name in dropped else ""
            lines.append(f"  {name}: {format_float(weight)}{flag}")
    else:
        importances = feature_importance(model.trees)
        ranked = sorted(importances.items(), key=lambda kv: (-kv[1], kv[0]))
        obj = {
            "kind": "gbt",
            "objective_used": model.objective_used,
            "seed": model.seed,
            "n_trees": len(model.trees.trees),
            "importances": {n: float(v) for n, v in ranked},
        }
        lines = [f"gbt model ({len(model.trees.trees)} trees)"]
        for name, value in ranked:
            lines.append(f"  {name}: {format_float(value)}")
    return "\n".join(lines), obj


def report_to_obj(report: EvalReport) -> dict:
    obj: dict[str, Any] = {"version": 1}
    if report.category_accuracy is not None:
        obj["overall_accuracy"] = report.overall_accuracy
        obj["categories"] = {k: float(v) for k, v in report.category_accuracy.items()}
        return obj
    obj["avg_corr"] = report.avg_corr
    obj["avg_corr_aggregation"] = report.avg_corr_aggregation
    obj["tie_policy"] = report.tie_policy
    obj["datasets"] = {
        name: {
            "sys_pearson": stats.sys_pearson,
            "seg_pearson": stats.seg_pearson,
            "acc_t": stats.acc_t,
        }
        for name, stats in report.datasets.items()
    }
    return obj
