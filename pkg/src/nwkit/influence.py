"""Closed-form leave-one-out prediction and support influence.

Removing support entry s from a prediction renormalizes it:

    f_minus = (f - w_s * onehot(y_s)) / (1 - w_s)

and the influence of entry s on a query with true label y is the exact change
in cross-entropy loss caused by that removal:

    I = log( (f_y - f_y * w_s) / (f_y - w_s * [y == y_s]) )

Both are pure functions of the cached prediction (probs and weights); no
re-extraction of features is needed. Influence is +inf exactly when removing
the sole same-class mass (y == y_s and f_y == w_s), which is a legitimate,
rankable outcome rather than an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PredictionResult, SupportSet, nw_predict
from .errors import (
    CannotRemoveLastError,
    DegenerateWeightError,
    InvalidArgumentError,
    UndefinedLossError,
)

__all__ = ["InfluenceRecord", "loo_predict", "support_influence", "rank_influence"]


@dataclass(frozen=True)
class InfluenceRecord:
    """Influence of one support entry on one query; positive = helpful."""

    support_id: str
    influence: float
    same_class: bool


def _check_index(support: SupportSet, removed_index: int):
    if len(support) < 2:
        raise CannotRemoveLastError("cannot remove the last support entry")
    if not 0 <= removed_index < len(support):
        raise InvalidArgumentError(
            f"removed_index {removed_index} outside [0, {len(support)})"
        )


def loo_predict(pred: PredictionResult, support: SupportSet, removed_index: int) -> np.ndarray:
    """Probability vector after removing one support entry, by renormalization.

    Entries are clamped to 0 only against negative floating-point dust
    (magnitude below 1e-12); anything larger would indicate a corrupted input.
    """
    _check_index(support, removed_index)
    w_s = float(pred.weights.weights[removed_index])
    if w_s >= 1.0 - 1e-15:
        raise DegenerateWeightError(
            f"weight {w_s!r} on entry {removed_index} leaves no mass to renormalize"
        )
    out = pred.probs.copy()
    out[support.labels[removed_index]] -= w_s
    out /= 1.0 - w_s
    dust = (out < 0.0) & (out > -1e-12)
    out[dust] = 0.0
    return out


def support_influence(
    pred: PredictionResult, support: SupportSet, removed_index: int, true_label: int
) -> InfluenceRecord:
    """Closed-form loss change from removing one support entry.

    Requires the query's true label; +inf when the removed entry carries the
    query class's entire probability mass.
    """
    _check_index(support, removed_index)
    if not 0 <= true_label < support.class_count:
        raise InvalidArgumentError(
            f"true_label {true_label} outside [0, {support.class_count})"
        )
    f_y = float(pred.probs[true_label])
    if f_y == 0.0:
        raise UndefinedLossError(
            f"class {true_label} has zero probability; it is absent from the support set"
        )
    w_s = float(pred.weights.weights[removed_index])
    same = int(support.labels[removed_index]) == true_label
    sid = support.ids[removed_index]
    denom = f_y - w_s if same else f_y
    if same and denom == 0.0:
        return InfluenceRecord(support_id=sid, influence=math.inf, same_class=True)
    num = f_y * (1.0 - w_s)
    if num == 0.0:
        # only reachable when w_s rounds to exactly 1 with f_y > 0
        raise DegenerateWeightError(
            f"weight {w_s!r} on entry {removed_index} makes the influence ratio degenerate"
        )
    return InfluenceRecord(
        support_id=sid, influence=math.log(num / denom), same_class=same
    )


def rank_influence(query, support: SupportSet, temperature) -> list[InfluenceRecord]:
    """One influence record per support entry, sorted most-helpful first.

    ``query`` is a LabeledExample (its label is the ground truth). +inf sorts
    first; ties break by support entry order.
    """
    pred = nw_predict(query, support, temperature)
    records = [
        support_influence(pred, support, i, query.label) for i in range(len(support))
    ]
    return sorted(records, key=lambda r: -r.influence)
