"""Raw-score preprocessing: clip to the declared range, rescale to [0, 1],
invert lower-is-better metrics.

The steps run in exactly that order.  Clipping absorbs out-of-range values
(neural metrics routinely overshoot their nominal range), so normalization
never fails on real inputs.  Range metadata is user-supplied configuration:
ranges are metric knowledge, not something estimated from data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import MetacalError, MetricSpec, ScoreMatrix, _check_unique_names


class SpecMismatch(MetacalError):
    """Preprocessing config does not line up with the matrix columns."""


@dataclass(frozen=True)
class PreprocessConfig:
    """Ordered metric specs, one per score-matrix column."""

    specs: tuple[MetricSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "specs", tuple(self.specs))
        _check_unique_names(self.specs)

    def check_against(self, matrix: ScoreMatrix) -> None:
        if len(self.specs) != matrix.n_metrics:
            raise SpecMismatch(
                f"{len(self.specs)} specs for {matrix.n_metrics} matrix columns"
            )
        for spec, name in zip(self.specs, matrix.metric_names):
            if spec.name != name:
                raise SpecMismatch(
                    f"spec {spec.name!r} does not match column {name!r}"
                )


def normalize_score(raw: float, spec: MetricSpec) -> float:
    """Clip `raw` into [spec.min, spec.max], rescale to [0, 1], and invert
    when lower raw scores mean better quality."""
    clipped = min(max(float(raw), spec.min), spec.max)
    scaled = (clipped - spec.min) / (spec.max - spec.min)
    return scaled if spec.higher_is_better else 1.0 - scaled


def normalize_values(values: np.ndarray, specs: Sequence[MetricSpec]) -> np.ndarray:
    """Vectorized `normalize_score` over the columns of a raw (M, N) array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != len(specs):
        raise SpecMismatch(
            f"value shape {arr.shape} does not match {len(specs)} specs"
        )
    out = np.empty_like(arr)
    for j, spec in enumerate(specs):
        col = np.clip(arr[:, j], spec.min, spec.max)
        scaled = (col - spec.min) / (spec.max - spec.min)
        out[:, j] = scaled if spec.higher_is_better else 1.0 - scaled
    return out


def normalize_matrix(matrix: ScoreMatrix, config: PreprocessConfig) -> ScoreMatrix:
    """Apply `normalize_score` element-wise; example ids pass through."""
    config.check_against(matrix)
    return ScoreMatrix(
        matrix.metric_names,
        matrix.example_ids,
        normalize_values(matrix.values, config.specs),
    )


def unit_specs(names: Sequence[str]) -> tuple[MetricSpec, ...]:
    """Identity specs (0, 1, higher-is-better) for already-normalized columns."""
    return tuple(MetricSpec(name, 0.0, 1.0, True) for name in names)
