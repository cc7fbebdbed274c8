"""Nadaraya-Watson prediction head: distances, softmax weights, prediction, loss.

The prediction for a query is a weighted average of one-hot support labels,
where the weight on support entry i is a softmax over negative Euclidean
distances divided by a temperature:

    w_i = exp(-d_i / tau) / sum_j exp(-d_j / tau)

Distances are plain Euclidean, never squared; squaring them is the classic
mistake and changes the kernel. The softmax is computed with max-subtraction,
which is mathematically identical to the raw ratio but does not overflow for
large distances. All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptySupportError,
    InvalidArgumentError,
    InvalidTemperatureError,
)

__all__ = [
    "LabeledExample",
    "OneHotLabel",
    "SupportSet",
    "WeightVector",
    "PredictionResult",
    "pairwise_distances",
    "nw_weights",
    "nw_predict",
    "batch_distances",
    "batch_weights",
    "batch_probs",
    "batch_predict",
    "class_sums",
    "cross_entropy",
    "top_label_match_rate",
]


def _as_features(x) -> np.ndarray:
    """Coerce to a 1-D float64 vector, rejecting non-finite entries."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidArgumentError(f"feature vector must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("feature vector contains non-finite entries")
    return v


@dataclass(frozen=True)
class LabeledExample:
    """One example: a unique id, a feature vector in R^d, and a class label."""

    id: str
    features: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(self, "features", _as_features(self.features))
        if self.label < 0:
            raise InvalidArgumentError(f"label must be >= 0, got {self.label}")

    @property
    def dim(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class OneHotLabel:
    """A class label together with the class count, materializable as a one-hot vector."""

    class_count: int
    hot_index: int

    def __post_init__(self):
        if not 0 <= self.hot_index < self.class_count:
            raise InvalidArgumentError(
                f"hot_index {self.hot_index} outside [0, {self.class_count})"
            )

    def to_vector(self) -> np.ndarray:
        v = np.zeros(self.class_count)
        v[self.hot_index] = 1.0
        return v


class SupportSet:
    """An ordered collection of labeled support entries sharing one feature space.

    Entries may be real training examples or synthetic centroids; ``sources``
    records per-entry provenance (a real example id, or the marker
    ``"centroid"``). Features, labels and ids are exposed as parallel arrays
    in entry order. Instances are immutable after construction.
    """

    def __init__(self, entries, class_count, sources=None):
        entries = list(entries)
        if not entries:
            raise EmptySupportError("support set must be non-empty")
        dim = entries[0].dim
        for e in entries:
            if e.dim != dim:
                raise DimensionMismatchError(
                    f"entry {e.id!r} has dimension {e.dim}, expected {dim}"
                )
            if e.label >= class_count:
                raise InvalidArgumentError(
                    f"entry {e.id!r} has label {e.label} >= class_count {class_count}"
                )
        self.entries = entries
        self.ids = [e.id for e in entries]
        self.features = np.stack([e.features for e in entries])
        self.labels = np.array([e.label for e in entries], dtype=np.intp)
        self.sources = list(sources) if sources is not None else list(self.ids)
        if len(self.sources) != len(entries):
            raise InvalidArgumentError("sources must align with entries")
        self.dim = dim
        self.class_count = class_count
        self.class_index = {}
        for pos, lab in enumerate(self.labels):
            self.class_index.setdefault(int(lab), []).append(pos)

    def __len__(self) -> int:
        return len(self.entries)

    def classes_present(self):
        return sorted(self.class_index)

    def subset(self, positions) -> "SupportSet":
        """New SupportSet keeping only ``positions``, in their given order."""
        positions = list(positions)
        return SupportSet(
            [self.entries[i] for i in positions],
            self.class_count,
            sources=[self.sources[i] for i in positions],
        )

    def without(self, position: int) -> "SupportSet":
        return self.subset([i for i in range(len(self)) if i != position])


@dataclass(frozen=True)
class WeightVector:
    """Normalized support weights plus the temperature that produced them."""

    weights: np.ndarray
    temperature: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.size == 0:
            raise EmptySupportError("weight vector must be non-empty")
        if np.any(w < 0.0) or np.any(w > 1.0):
            raise InvalidArgumentError("weights must lie in [0, 1]")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise InvalidArgumentError(f"weights sum to {w.sum()!r}, expected 1")

    def __len__(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class PredictionResult:
    """Class probabilities plus the per-support weights that produced them."""

    probs: np.ndarray
    weights: WeightVector
    query_id: str = ""

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        # the reconstruction identity (probs = per-class weight sums) is kept
        # bit-exact, so an all-one-class sum may exceed 1 by rounding dust
        if np.any(p < 0.0) or np.any(p > 1.0 + 1e-9):
            raise InvalidArgumentError("probabilities must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise InvalidArgumentError(f"probabilities sum to {p.sum()!r}, expected 1")

    @property
    def predicted_class(self) -> int:
        """Argmax class; ties resolve to the lowest class index."""
        return int(np.argmax(self.probs))

    @property
    def confidence(self) -> float:
        return float(self.probs[self.predicted_class])


def pairwise_distances(query, support: SupportSet) -> np.ndarray:
    """Euclidean (not squared) distance from the query to each support entry.

    Parameters
    ----------
    query : array_like of shape (d,)
    support : SupportSet with dim d

    Returns
    -------
    ndarray of shape (len(support),), non-negative, in entry order.
    """
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != support.dim:
        raise DimensionMismatchError(
            f"query has dimension {q.shape[0] if q.ndim == 1 else q.shape}, "
            f"support has dimension {support.dim}"
        )
    diff = support.features - q
    return np.sqrt((diff * diff).sum(axis=1))


def nw_weights(distances, temperature) -> WeightVector:
    """Softmax over negative distances divided by the temperature.

    Computed with max-subtraction so large distances do not overflow.
    """
    tau = float(temperature)
    if not math.isfinite(tau) or tau <= 0.0:
        raise InvalidTemperatureError(f"temperature must be > 0, got {temperature!r}")
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise EmptySupportError("cannot compute weights over an empty support")
    if not np.all(np.isfinite(d)):
        raise InvalidArgumentError("distances must be finite")
    if np.any(d < 0.0):
        raise InvalidArgumentError("distances must be non-negative")
    scores = -d / tau
    scores -= scores.max()
    e = np.exp(scores)
    return WeightVector(weights=e / e.sum(), temperature=tau)


def class_sums(weights: np.ndarray, labels: np.ndarray, class_count: int) -> np.ndarray:
    """probs[c] = sum of weights over entries labeled c (the reconstruction identity)."""
    probs = np.zeros(class_count)
    for c in range(class_count):
        mask = labels == c
        if mask.any():
            probs[c] = weights[mask].sum()
    return probs


def nw_predict(query, support: SupportSet, temperature, query_id="") -> PredictionResult:
    """Nadaraya-Watson prediction: probs[c] = sum of weights on entries labeled c.

    ``query`` may be a feature vector or a LabeledExample (whose id is then
    carried into the result).
    """
    if isinstance(query, LabeledExample):
        query_id = query_id or query.id
        query = query.features
    dist = pairwise_distances(query, support)
    wv = nw_weights(dist, temperature)
    probs = class_sums(wv.weights, support.labels, support.class_count)
    return PredictionResult(probs=probs, weights=wv, query_id=query_id)


def batch_distances(queries, support: SupportSet) -> np.ndarray:
    """Distance matrix of shape (n_queries, len(support))."""
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != support.dim:
        raise DimensionMismatchError(
            f"queries have shape {q.shape}, support has dimension {support.dim}"
        )
    diff = q[:, None, :] - support.features[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def batch_weights(distances: np.ndarray, temperature) -> np.ndarray:
    """Row-wise softmax over negative distances; rows sum to 1."""
    tau = float(temperature)
    if not math.isfinite(tau) or tau <= 0.0:
        raise InvalidTemperatureError(f"temperature must be > 0, got {temperature!r}")
    # C-contiguity pins the reduction order: numpy sums F-ordered arrays
    # sequentially instead of pairwise, which costs bit-reproducibility
    scores = -np.ascontiguousarray(distances, dtype=np.float64) / tau
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=1, keepdims=True)


def batch_probs(weights: np.ndarray, support: SupportSet) -> np.ndarray:
    """Row-wise class sums: probs[q, c] = sum of weights[q, i] over entries labeled c."""
    probs = np.zeros((weights.shape[0], support.class_count))
    for c in range(support.class_count):
        mask = support.labels == c
        if mask.any():
            probs[:, c] = weights[:, mask].sum(axis=1)
    return probs


def batch_predict(queries, support: SupportSet, temperature):
    """Vectorized nw_predict over a query matrix.

    Returns (probs, weights) with shapes (Q, C) and (Q, len(support)).
    """
    w = batch_weights(batch_distances(queries, support), temperature)
    return batch_probs(w, support), w


def cross_entropy(pred: PredictionResult, true_label: int) -> float:
    """-log probability of the true class; +inf when that probability is exactly 0."""
    probs = pred.probs if isinstance(pred, PredictionResult) else np.asarray(pred)
    if not 0 <= true_label < probs.shape[0]:
        raise InvalidArgumentError(
            f"true_label {true_label} outside [0, {probs.shape[0]})"
        )
    p = float(probs[true_label])
    return -math.log(p) if p > 0.0 else math.inf


def top_label_match_rate(
    query: LabeledExample, support: SupportSet, temperature, top_n: int
) -> float:
    """Fraction of the top_n highest-weighted support entries sharing the query's label.

    Entries are ranked by descending weight (equivalently ascending distance);
    ties break by entry order.
    """
    if top_n == 0:
        raise InvalidArgumentError("top_n must be >= 1")
    if top_n < 0 or top_n > len(support):
        raise InvalidArgumentError(
            f"top_n {top_n} outside [1, {len(support)}]"
        )
    wv = nw_weights(pairwise_distances(query.features, support), temperature)
    order = np.argsort(-wv.weights, kind="stable")
    top = order[:top_n]
    return float(np.mean(support.labels[top] == query.label))
