"""Expected calibration error, reliability diagrams, label smoothing, temperature scaling.

ECE partitions predictions into equal-width confidence bins over (0, 1]
(half-open on the left, confidence 0 falls into the first bin) and reports the
count-weighted mean absolute gap between per-bin accuracy and mean confidence.

Temperature scaling sweeps tau over a grid (default: 100 values linearly
spaced on [0.5, 3]) and picks the tau minimizing mean validation
cross-entropy. Distances are tau-independent, so they are computed once and
only the softmax is re-evaluated per grid point; scaling is order-preserving
in distance and therefore never changes any predicted class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    PredictionResult,
    SupportSet,
    batch_distances,
    batch_probs,
    batch_weights,
)
from .errors import EmptySupportError, InvalidArgumentError

__all__ = [
    "ReliabilityBin",
    "ReliabilityReport",
    "SmoothedLabel",
    "expected_calibration_error",
    "smooth_labels",
    "temperature_scale",
    "temperature_sweep",
    "DEFAULT_GRID",
]

DEFAULT_GRID = (0.5, 3.0, 100)


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float


@dataclass(frozen=True)
class ReliabilityReport:
    """Per-bin reliability stats plus the scalar ECE."""

    bins: list[ReliabilityBin]
    ece: float
    bin_count: int

    def to_dict(self) -> dict:
        return {
            "bin_count": self.bin_count,
            "ece": self.ece,
            "bins": [
                {
                    "lower": b.lower,
                    "upper": b.upper,
                    "count": b.count,
                    "mean_confidence": b.mean_confidence,
                    "accuracy": b.accuracy,
                }
                for b in self.bins
            ],
        }


@dataclass(frozen=True)
class SmoothedLabel:
    """One-hot label mixed with the uniform distribution by weight epsilon."""

    class_count: int
    epsilon: float
    hot_index: int

    def to_vector(self) -> np.ndarray:
        v = np.full(self.class_count, self.epsilon / self.class_count)
        v[self.hot_index] += 1.0 - self.epsilon
        return v


def _prediction_probs(predictions) -> np.ndarray:
    if isinstance(predictions, np.ndarray):
        return np.asarray(predictions, dtype=np.float64)
    return np.stack(
        [p.probs if isinstance(p, PredictionResult) else np.asarray(p) for p in predictions]
    )


def expected_calibration_error(predictions, true_labels, bin_count=15) -> ReliabilityReport:
    """Reliability report over a batch of predictions.

    ``predictions`` may be a list of PredictionResult or a (N, C) probability
    matrix. Confidence is the max class probability; the predicted class is the
    argmax with ties resolving to the lowest index.
    """
    if bin_count < 1:
        raise InvalidArgumentError(f"bin_count must be >= 1, got {bin_count}")
    probs = _prediction_probs(predictions)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise EmptySupportError("expected_calibration_error needs at least one prediction")
    labels = np.asarray(true_labels, dtype=np.intp)
    if labels.shape[0] != probs.shape[0]:
        raise InvalidArgumentError("predictions and true_labels must align")

    predicted = probs.argmax(axis=1)  # argmax takes the lowest index on ties
    confidence = probs[np.arange(probs.shape[0]), predicted]
    correct = predicted == labels

    edges = np.array([i / bin_count for i in range(bin_count + 1)])
    # (lower, upper] bins; confidence 0 joins the first bin
    idx = np.searchsorted(edges, confidence, side="left") - 1
    idx[idx < 0] = 0

    n = probs.shape[0]
    bins = []
    ece = 0.0
    for b in range(bin_count):
        mask = idx == b
        count = int(mask.sum())
        if count:
            mean_conf = float(confidence[mask].mean())
            acc = float(correct[mask].mean())
            ece += (count / n) * abs(acc - mean_conf)
        else:
            mean_conf = 0.0
            acc = 0.0
        bins.append(
            ReliabilityBin(
                lower=float(edges[b]),
                upper=float(edges[b + 1]),
                count=count,
                mean_confidence=mean_conf,
                accuracy=acc,
            )
        )
    return ReliabilityReport(bins=bins, ece=ece, bin_count=bin_count)


DEFAULT_SMOOTHING = 0.1


def smooth_labels(labels, epsilon=DEFAULT_SMOOTHING) -> list[SmoothedLabel]:
    """Mix one-hot labels with the uniform distribution: (1-eps)*onehot + eps/C."""
    eps = float(epsilon)
    if not 0.0 <= eps < 1.0:
        raise InvalidArgumentError(f"epsilon must lie in [0, 1), got {epsilon!r}")
    return [
        SmoothedLabel(class_count=lab.class_count, epsilon=eps, hot_index=lab.hot_index)
        for lab in labels
    ]


def _grid_values(grid) -> np.ndarray:
    lo, hi, steps = grid
    if steps < 1:
        raise InvalidArgumentError(f"grid needs at least one step, got {steps}")
    if lo > hi or (steps > 1 and lo >= hi):
        raise InvalidArgumentError(f"degenerate grid bounds [{lo}, {hi}]")
    if lo <= 0:
        raise InvalidArgumentError(f"grid temperatures must be positive, got lo={lo}")
    if steps == 1:
        return np.array([float(lo)])
    return np.linspace(lo, hi, steps)


def temperature_sweep(val_queries, support: SupportSet, grid=DEFAULT_GRID):
    """Mean validation NLL for every tau on the grid.

    Returns (taus, nlls). Pairwise distances are computed once and cached; only
    the softmax is re-evaluated per grid point.
    """
    val_queries = list(val_queries)
    if not val_queries:
        raise EmptySupportError("temperature scaling needs a non-empty validation set")
    taus = _grid_values(grid)
    feats = np.stack([q.features for q in val_queries])
    labels = np.array([q.label for q in val_queries], dtype=np.intp)
    dist = batch_distances(feats, support)
    nlls = np.empty(taus.shape[0])
    for i, tau in enumerate(taus):
        w = batch_weights(dist, tau)
        probs = batch_probs(w, support)
        p_true = probs[np.arange(len(val_queries)), labels]
        with np.errstate(divide="ignore"):
            nlls[i] = float(np.mean(-np.log(p_true)))
    return taus, nlls


def temperature_scale(val_queries, support: SupportSet, grid=DEFAULT_GRID) -> float:
    """The grid tau minimizing mean validation cross-entropy (ties: smaller tau)."""
    taus, nlls = temperature_sweep(val_queries, support, grid)
    return float(taus[int(np.argmin(nlls))])


def nll(predictions, true_labels) -> float:
    """Mean negative log-likelihood of the true labels."""
    probs = _prediction_probs(predictions)
    labels = np.asarray(true_labels, dtype=np.intp)
    p_true = probs[np.arange(probs.shape[0]), labels]
    if np.any(p_true == 0.0):
        return math.inf
    return float(np.mean(-np.log(p_true)))
