"""Inference-time support set construction: Full, Random, Cluster, Closest-Cluster.

Cluster and Closest-Cluster distill the training data per class with k-means
run in embedding space: clustering one class never reads another class's
features. Cluster mode emits synthetic centroid entries (marked with source
``"centroid"``); Closest-Cluster replaces each centroid with the real training
example of that class nearest to it, deduplicated within the class.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import LabeledExample, SupportSet
from .errors import InfeasibleKError, InsufficientClassError, InvalidArgumentError

__all__ = [
    "InferenceMode",
    "CentroidEntry",
    "kmeans",
    "kmeans_with_trace",
    "build_support",
    "closest_distinct",
]

CENTROID_SOURCE = "centroid"


@dataclass(frozen=True)
class InferenceMode:
    """Support construction policy: full, random(k), cluster(k), or cc(k)."""

    kind: str
    k: int | None = None
    seed: int | None = None

    _KINDS = ("full", "random", "cluster", "cc")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise InvalidArgumentError(
                f"mode kind must be one of {self._KINDS}, got {self.kind!r}"
            )
        if self.kind != "full":
            if self.k is None or self.k < 1:
                raise InvalidArgumentError(f"mode {self.kind!r} requires k >= 1")
            if self.seed is None:
                raise InvalidArgumentError(f"mode {self.kind!r} requires a seed")

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def random(cls, k, seed):
        return cls("random", k=k, seed=seed)

    @classmethod
    def cluster(cls, k, seed):
        return cls("cluster", k=k, seed=seed)

    @classmethod
    def closest_cluster(cls, k, seed):
        return cls("cc", k=k, seed=seed)


@dataclass(frozen=True)
class CentroidEntry:
    """A support row produced by distillation: features, label, and provenance."""

    id: str
    features: np.ndarray
    label: int
    source: str  # "centroid" for synthetic rows, else a real training id


def _kmeans_plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest_sq = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest_sq.sum()
        if total <= 0.0:
            # all points already coincide with a centroid; cannot happen while
            # fewer than n_distinct centroids are chosen, but guard anyway
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest_sq / total))
        centroids[j] = points[idx]
        closest_sq = np.minimum(closest_sq, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.argmin((diff * diff).sum(axis=2), axis=1)


def _wcss(points, centroids, assignments) -> float:
    return float(((points - centroids[assignments]) ** 2).sum())


def kmeans_with_trace(points, k, seed=0, max_iters=100, tol=1e-6):
    """Lloyd's k-means from a k-means++ start; also returns the per-iteration WCSS.

    Terminates when the max centroid displacement drops below ``tol`` or after
    ``max_iters`` iterations. Empty clusters are repaired by promoting the
    point farthest from its assigned centroid to a singleton cluster, so
    exactly k centroids come back, each owning at least one point.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise InvalidArgumentError("kmeans requires at least one point")
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    n_distinct = np.unique(pts, axis=0).shape[0]
    if k > n_distinct:
        raise InfeasibleKError(
            f"k={k} exceeds the {n_distinct} distinct points available"
        )
    rng = np.random.default_rng(seed)
    centroids = _kmeans_plusplus_init(pts, k, rng)
    trace = []
    for _ in range(max_iters):
        assignments = _assign(pts, centroids)
        # repair empty clusters before the update step
        for j in range(k):
            if not np.any(assignments == j):
                dist_sq = ((pts - centroids[assignments]) ** 2).sum(axis=1)
                # never steal from a cluster about to become singleton
                counts = np.bincount(assignments, minlength=k)
                dist_sq[counts[assignments] <= 1] = -1.0
                assignments[int(np.argmax(dist_sq))] = j
        new_centroids = np.empty_like(centroids)
        for j in range(k):
            new_centroids[j] = pts[assignments == j].mean(axis=0)
        trace.append(_wcss(pts, new_centroids, assignments))
        if len(trace) > 1 and trace[-1] > trace[-2] * (1.0 + 1e-12) + 1e-12:
            raise AssertionError("within-cluster sum of squares increased")
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    assignments = _assign(pts, centroids)
    return centroids, assignments, trace


def kmeans(points, k, seed=0, max_iters=100, tol=1e-6):
    """Per-class clustering engine; returns (centroids, assignments)."""
    centroids, assignments, _ = kmeans_with_trace(points, k, seed, max_iters, tol)
    return centroids, assignments


def _by_class(examples):
    classes = {}
    for pos, ex in enumerate(examples):
        classes.setdefault(ex.label, []).append(pos)
    return classes


def _require_population(classes, k, mode):
    for label in sorted(classes):
        if len(classes[label]) < k:
            raise InsufficientClassError(
                f"class {label} has {len(classes[label])} examples, "
                f"but mode {mode!r} requires at least {k}"
            )


def build_support(train_examples, mode: InferenceMode, class_count=None) -> SupportSet:
    """Build a SupportSet from already-embedded training examples.

    Full returns the training data verbatim in dataset order. The other modes
    emit k entries per class (classes in ascending order): Random draws k
    uniformly without replacement, Cluster runs per-class k-means and emits the
    centroids as synthetic entries, and Closest-Cluster maps each centroid to
    the nearest real example of that class.
    """
    train_examples = list(train_examples)
    if not train_examples:
        raise InsufficientClassError("no training examples to build a support set from")
    if class_count is None:
        class_count = max(e.label for e in train_examples) + 1
    classes = _by_class(train_examples)

    if mode.kind == "full":
        return SupportSet(train_examples, class_count)

    rng = np.random.default_rng(mode.seed)
    entries, sources = [], []

    if mode.kind == "random":
        _require_population(classes, mode.k, mode.kind)
        for label in sorted(classes):
            chosen = rng.choice(len(classes[label]), size=mode.k, replace=False)
            for pos in chosen:
                ex = train_examples[classes[label][pos]]
                entries.append(ex)
                sources.append(ex.id)
        return SupportSet(entries, class_count, sources=sources)

    if mode.kind == "cluster":
        for label in sorted(classes):
            members = [train_examples[p] for p in classes[label]]
            feats = np.stack([m.features for m in members])
            k_eff = min(mode.k, np.unique(feats, axis=0).shape[0])
            if k_eff < mode.k:
                warnings.warn(
                    f"class {label} has only {k_eff} distinct points; "
                    f"emitting {k_eff} centroids instead of {mode.k}",
                    stacklevel=2,
                )
            centroids, _ = kmeans(feats, k_eff, seed=int(rng.integers(2**32)))
            for j, c in enumerate(centroids):
                entries.append(
                    LabeledExample(id=f"centroid:{label}:{j}", features=c, label=label)
                )
                sources.append(CENTROID_SOURCE)
        return SupportSet(entries, class_count, sources=sources)

    # closest cluster: real examples nearest the per-class centroids
    _require_population(classes, mode.k, mode.kind)
    for label in sorted(classes):
        members = [train_examples[p] for p in classes[label]]
        feats = np.stack([m.features for m in members])
        centroids, _ = kmeans(feats, mode.k, seed=int(rng.integers(2**32)))
        for pick in closest_distinct(feats, centroids):
            entries.append(members[pick])
            sources.append(members[pick].id)
    return SupportSet(entries, class_count, sources=sources)


def closest_distinct(points: np.ndarray, centroids: np.ndarray) -> list[int]:
    """Index of the point nearest each centroid, deduplicated.

    When two centroids share a nearest point, the later one takes its
    next-nearest unused point; distance ties break by point order.
    """
    if centroids.shape[0] > points.shape[0]:
        raise InvalidArgumentError(
            f"{centroids.shape[0]} centroids cannot map to {points.shape[0]} distinct points"
        )
    used = set()
    picks = []
    for c in centroids:
        order = np.argsort(((points - c) ** 2).sum(axis=1), kind="stable")
        pick = next(int(i) for i in order if int(i) not in used)
        used.add(pick)
        picks.append(pick)
    return picks
