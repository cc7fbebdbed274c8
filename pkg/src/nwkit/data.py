"""Dataset ingestion, synthetic generators, stratified splits, and file formats.

Datasets persist as CSV with header ``id,label,f0,...,f{n-1}`` (UTF-8, LF or
CRLF); support sets add a ``source`` column distinguishing real example ids
from the synthetic ``"centroid"`` marker. Floats are printed with the
shortest round-trip representation, so save/load cycles are bit-exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import LabeledExample, SupportSet
from .errors import (
    GenerationError,
    InvalidArgumentError,
    ParseError,
    StratificationError,
    UnknownIdError,
)
from .support import CENTROID_SOURCE

__all__ = [
    "Dataset",
    "load_csv",
    "save_csv",
    "load_support_csv",
    "save_support_csv",
    "generate_blobs",
    "generate_rings",
    "split",
    "SPLIT_TAGS",
]

SPLIT_TAGS = ("train", "val", "test")


@dataclass
class Dataset:
    """An ordered list of examples with unique ids and contiguous labels [0, C)."""

    examples: list[LabeledExample]
    dim: int
    class_count: int
    tags: list[str] | None = None  # per-example split tag, assigned by split()

    def __post_init__(self):
        seen = set()
        labels = set()
        for ex in self.examples:
            if ex.id in seen:
                raise ParseError(f"duplicate id {ex.id!r}")
            seen.add(ex.id)
            if ex.dim != self.dim:
                raise InvalidArgumentError(
                    f"example {ex.id!r} has dimension {ex.dim}, dataset declares {self.dim}"
                )
            if not 0 <= ex.label < self.class_count:
                raise InvalidArgumentError(
                    f"example {ex.id!r} has label {ex.label} outside [0, {self.class_count})"
                )
            labels.add(ex.label)
        if self.examples and labels != set(range(self.class_count)):
            missing = sorted(set(range(self.class_count)) - labels)
            raise ParseError(f"labels are not contiguous; missing classes {missing}")
        if self.tags is not None and len(self.tags) != len(self.examples):
            raise InvalidArgumentError("tags must align with examples")
        self._index = {ex.id: i for i, ex in enumerate(self.examples)}

    def __len__(self) -> int:
        return len(self.examples)

    def by_id(self, example_id: str) -> LabeledExample:
        if example_id not in self._index:
            raise UnknownIdError(f"unknown example id {example_id!r}")
        return self.examples[self._index[example_id]]

    def subset(self, tag: str) -> "Dataset":
        """Examples carrying the given split tag, as a new untagged Dataset."""
        if self.tags is None:
            raise InvalidArgumentError("dataset has no split tags; call split() first")
        picked = [ex for ex, t in zip(self.examples, self.tags) if t == tag]
        return Dataset(picked, self.dim, self.class_count)

    def labels_array(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.intp)

    def features_matrix(self) -> np.ndarray:
        return np.stack([e.features for e in self.examples])


def _format_float(v: float) -> str:
    return repr(float(v))


def _parse_header(header, line_num, extra_cols=()):
    expected_prefix = ["id", "label", *extra_cols]
    if header is None or len(header) < len(expected_prefix) + 1:
        raise ParseError("missing or truncated header", line=line_num)
    if header[: len(expected_prefix)] != expected_prefix:
        raise ParseError(
            f"header must start with {','.join(expected_prefix)}", line=line_num
        )
    feature_cols = header[len(expected_prefix):]
    for i, name in enumerate(feature_cols):
        if name != f"f{i}":
            raise ParseError(f"expected feature column f{i}, found {name!r}", line=line_num)
    return len(feature_cols)


def _read_rows(path, extra_cols=()):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        dim = _parse_header(header, 1, extra_cols)
        n_fixed = 2 + len(extra_cols)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != n_fixed + dim:
                raise ParseError(
                    f"expected {n_fixed + dim} fields, found {len(row)}", line=line
                )
            ident = row[0]
            try:
                label = int(row[1])
            except ValueError:
                raise ParseError(f"label {row[1]!r} is not an integer", line=line) from None
            try:
                feats = np.array([float(v) for v in row[n_fixed:]])
            except ValueError:
                raise ParseError("feature value is not a decimal float", line=line) from None
            extras = tuple(row[2:n_fixed])
            rows.append((line, ident, label, feats, extras))
    return dim, rows


def load_csv(path) -> Dataset:
    """Parse a dataset CSV; rejects ragged rows, duplicate ids, gapped labels."""
    dim, rows = _read_rows(path)
    examples = []
    seen = {}
    for line, ident, label, feats, _ in rows:
        if ident in seen:
            raise ParseError(
                f"duplicate id {ident!r} (first seen on line {seen[ident]})", line=line
            )
        seen[ident] = line
        if label < 0:
            raise ParseError(f"label {label} is negative", line=line)
        try:
            examples.append(LabeledExample(id=ident, features=feats, label=label))
        except InvalidArgumentError as exc:
            raise ParseError(str(exc), line=line) from None
    if not examples:
        raise ParseError("file contains no data rows", line=2)
    class_count = max(e.label for e in examples) + 1
    return Dataset(examples, dim, class_count)


def save_csv(dataset: Dataset, path):
    """Inverse of load_csv; floats use shortest round-trip formatting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"f{i}" for i in range(dataset.dim)])
        for ex in dataset.examples:
            writer.writerow([ex.id, ex.label] + [_format_float(v) for v in ex.features])


def save_support_csv(support: SupportSet, path):
    """Persist a support set with its per-entry provenance column."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label", "source"] + [f"f{i}" for i in range(support.dim)])
        for i, entry in enumerate(support.entries):
            writer.writerow(
                [entry.id, entry.label, support.sources[i]]
                + [_format_float(v) for v in entry.features]
            )


def load_support_csv(path, class_count=None) -> SupportSet:
    """Inverse of save_support_csv."""
    _, rows = _read_rows(path, extra_cols=("source",))
    entries, sources = [], []
    for line, ident, label, feats, extras in rows:
        try:
            entries.append(LabeledExample(id=ident, features=feats, label=label))
        except InvalidArgumentError as exc:
            raise ParseError(str(exc), line=line) from None
        sources.append(extras[0])
    if not entries:
        raise ParseError("support file contains no rows", line=2)
    if class_count is None:
        class_count = max(e.label for e in entries) + 1
    return SupportSet(entries, class_count, sources=sources)


def generate_blobs(class_count, per_class, dim, separation, noise_sd, seed) -> Dataset:
    """Gaussian blobs: seeded centers at pairwise distance >= separation.

    Points are ``center + noise_sd * N(0, I)``; ids are ``blob-<label>-<i>``.
    """
    if class_count < 1 or per_class < 1 or dim < 1:
        raise InvalidArgumentError("class_count, per_class and dim must all be >= 1")
    if separation < 0 or noise_sd < 0:
        raise InvalidArgumentError("separation and noise_sd must be non-negative")
    rng = np.random.default_rng(seed)
    box = max(separation * class_count, 1.0)
    centers = []
    for _ in range(class_count):
        for _attempt in range(1000):
            cand = rng.uniform(-box, box, size=dim)
            if all(np.linalg.norm(cand - c) >= separation for c in centers):
                centers.append(cand)
                break
        else:
            raise GenerationError(
                f"could not place {class_count} centers at separation {separation}"
            )
    examples = []
    for label, center in enumerate(centers):
        noise = rng.standard_normal((per_class, dim)) * noise_sd
        for i in range(per_class):
            examples.append(
                LabeledExample(id=f"blob-{label}-{i}", features=center + noise[i], label=label)
            )
    return Dataset(examples, dim, class_count)


def generate_rings(per_class, noise_sd, seed, radii=(1.0, 2.0)) -> Dataset:
    """Two concentric rings in 2-D; a linearly inseparable sanity task."""
    if per_class < 1:
        raise InvalidArgumentError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    examples = []
    for label, radius in enumerate(radii):
        angles = rng.uniform(0.0, 2.0 * np.pi, size=per_class)
        noise = rng.standard_normal((per_class, 2)) * noise_sd
        for i in range(per_class):
            point = radius * np.array([np.cos(angles[i]), np.sin(angles[i])]) + noise[i]
            examples.append(LabeledExample(id=f"ring-{label}-{i}", features=point, label=label))
    return Dataset(examples, 2, len(radii))


def _apportion(m: int, fractions) -> list[int]:
    """Largest-remainder allocation of m items; deterministic, sums to m."""
    quotas = [m * f for f in fractions]
    counts = [int(q) for q in quotas]
    remainders = sorted(
        range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in range(m - sum(counts)):
        counts[remainders[i]] += 1
    return counts


def split(dataset: Dataset, fractions, seed) -> Dataset:
    """Stratified train/val/test tagging, deterministic given the seed.

    ``fractions`` is a (train, val, test) triple summing to 1. Every class is
    shuffled and apportioned independently, so equal-sized classes receive
    identical counts in each split.
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) != len(SPLIT_TAGS):
        raise InvalidArgumentError(f"need {len(SPLIT_TAGS)} fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"fractions must be non-negative and sum to 1: {fractions}")
    rng = np.random.default_rng(seed)
    tags = [""] * len(dataset.examples)
    by_class = {}
    for i, ex in enumerate(dataset.examples):
        by_class.setdefault(ex.label, []).append(i)
    for label in sorted(by_class):
        idxs = by_class[label]
        counts = _apportion(len(idxs), fractions)
        for tag, frac, count in zip(SPLIT_TAGS, fractions, counts):
            if frac > 0 and count == 0:
                raise StratificationError(
                    f"class {label} has {len(idxs)} examples; too few to appear "
                    f"in the {tag!r} split at fraction {frac}"
                )
        order = rng.permutation(len(idxs))
        cursor = 0
        for tag, count in zip(SPLIT_TAGS, counts):
            for j in range(cursor, cursor + count):
                tags[idxs[int(order[j])]] = tag
            cursor += count
    return Dataset(dataset.examples, dataset.dim, dataset.class_count, tags=tags)
