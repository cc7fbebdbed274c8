"""Episodic training of the feature extractor under the NW objective.

The extractor is a small MLP (affine layers with ReLU between them) followed
by a linear projection into the embedding space. Each training step samples a
mini-batch of (query, support) episodes; the loss is the mean cross-entropy of
the NW prediction for each query against its true label, and gradients flow
through both the query and support embeddings, through the softmax over
negative distances, and through the Euclidean distance itself (whose
derivative floors the distance at 1e-12 to avoid the coincident-point
singularity; forward distances are untouched).

An FC-head baseline (a linear classifier on the same extractor output,
trained with the same optimizer) is included for comparison.

Optimizer: SGD with momentum, weight decay applied as L2 added to the
gradient, and a step schedule that divides the learning rate by 10 after each
configured milestone. Everything is deterministic given the seed.

Checkpoints serialize to a JSON manifest carrying the architecture, seed and
config, plus one base64 blob of all parameters as little-endian float64,
row-major per matrix; round-trips are bit-exact.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .calibration import expected_calibration_error
from .core import LabeledExample, batch_predict
from .errors import (
    DimensionMismatchError,
    DivergenceError,
    InsufficientClassError,
    InvalidArgumentError,
    ParseError,
)
from .support import InferenceMode, build_support

__all__ = [
    "ExtractorModel",
    "TrainConfig",
    "Episode",
    "init_model",
    "forward",
    "sample_episode",
    "nw_loss_and_grad",
    "fc_loss_and_grad",
    "train",
    "embed_examples",
    "fc_predict_probs",
    "save_checkpoint",
    "load_checkpoint",
]

_DIST_FLOOR = 1e-12

CHECKPOINT_FORMAT = "nwkit-checkpoint-v1"


class ExtractorModel:
    """MLP feature extractor: hidden (W, b) pairs with ReLU, then a linear projection.

    ``fc`` is an optional (W, b) linear classifier head used by the FC
    baseline; the NW head has no trainable prediction parameters.
    """

    def __init__(self, layers, projection, fc=None):
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for w, b in layers]
        self.projection = (
            np.asarray(projection[0], dtype=np.float64),
            np.asarray(projection[1], dtype=np.float64),
        )
        self.fc = None
        if fc is not None:
            self.fc = (np.asarray(fc[0], dtype=np.float64), np.asarray(fc[1], dtype=np.float64))
        self._validate()

    def _validate(self):
        prev = None
        for w, b in list(self.layers) + [self.projection]:
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InvalidArgumentError("layer shapes must be (in, out) with bias (out,)")
            if prev is not None and w.shape[0] != prev:
                raise DimensionMismatchError(
                    f"layer input {w.shape[0]} does not chain with previous output {prev}"
                )
            prev = w.shape[1]
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise InvalidArgumentError("model parameters must be finite")

    @property
    def input_dim(self) -> int:
        first = self.layers[0][0] if self.layers else self.projection[0]
        return first.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.projection[0].shape[1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w, _ in self.layers)

    @property
    def class_count(self):
        return self.fc[0].shape[1] if self.fc is not None else None

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (shared refs, not copies)."""
        params = []
        for w, b in self.layers:
            params.extend([w, b])
        params.extend(self.projection)
        if self.fc is not None:
            params.extend(self.fc)
        return params

    def copy(self) -> "ExtractorModel":
        return ExtractorModel(
            [(w.copy(), b.copy()) for w, b in self.layers],
            (self.projection[0].copy(), self.projection[1].copy()),
            fc=None if self.fc is None else (self.fc[0].copy(), self.fc[1].copy()),
        )


def init_model(input_dim, hidden, embed_dim, seed, head="nw", class_count=None) -> ExtractorModel:
    """He-initialized hidden layers, 1/sqrt(fan_in) projection, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = input_dim
    for width in hidden:
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
        layers.append((w, np.zeros(width)))
        fan_in = width
    proj = (rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, embed_dim)), np.zeros(embed_dim))
    fc = None
    if head == "fc":
        if class_count is None:
            raise InvalidArgumentError("fc head requires class_count")
        fc = (rng.normal(0.0, np.sqrt(1.0 / embed_dim), size=(embed_dim, class_count)),
              np.zeros(class_count))
    return ExtractorModel(layers, proj, fc=fc)


def _forward_cached(model: ExtractorModel, x: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DimensionMismatchError(
            f"input has shape {x.shape}, model expects (*, {model.input_dim})"
        )
    activations = [x]
    pre = []
    a = x
    for w, b in model.layers:
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        activations.append(a)
    wp, bp = model.projection
    return a @ wp + bp, activations, pre


def forward(model: ExtractorModel, x) -> np.ndarray:
    """Embed a (batch, input_dim) matrix; affine/ReLU chain, linear output."""
    out, _, _ = _forward_cached(model, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return out


def _backward(model, activations, pre, d_out):
    """Gradients for all extractor parameters given d(loss)/d(embedding)."""
    grads = [None] * (2 * len(model.layers) + 2)
    wp, _ = model.projection
    grads[-2] = activations[-1].T @ d_out
    grads[-1] = d_out.sum(axis=0)
    da = d_out @ wp.T
    for l in range(len(model.layers) - 1, -1, -1):
        dz = da * (pre[l] > 0.0)
        grads[2 * l] = activations[l].T @ dz
        grads[2 * l + 1] = dz.sum(axis=0)
        if l > 0:
            da = dz @ model.layers[l][0].T
    return grads


@dataclass(frozen=True)
class Episode:
    """One (query, support) pair; the query never sits in its own support."""

    query: LabeledExample
    support: list[LabeledExample]

    def __post_init__(self):
        ids = {e.id for e in self.support}
        if self.query.id in ids:
            raise InvalidArgumentError(f"query {self.query.id!r} appears in its own support")
        if self.query.label not in {e.label for e in self.support}:
            raise InvalidArgumentError(
                f"query class {self.query.label} missing from support labels"
            )


def sample_episode(train_set, query_index, n_support, rng) -> Episode:
    """Support = one same-class draw (never the query) + uniform fill, shuffled."""
    examples = list(getattr(train_set, "examples", train_set))
    if n_support < 1:
        raise InvalidArgumentError(f"support size must be >= 1, got {n_support}")
    if len(examples) < n_support + 1:
        raise InsufficientClassError(
            f"need at least {n_support + 1} examples, have {len(examples)}"
        )
    query = examples[query_index]
    same = [i for i, e in enumerate(examples) if e.label == query.label and i != query_index]
    if not same:
        raise InsufficientClassError(
            f"class {query.label} has a single member; cannot form an episode"
        )
    forced = int(rng.choice(len(same)))
    forced_idx = same[forced]
    rest = [i for i in range(len(examples)) if i not in (query_index, forced_idx)]
    fill = rng.choice(len(rest), size=n_support - 1, replace=False)
    chosen = [forced_idx] + [rest[int(i)] for i in fill]
    order = rng.permutation(len(chosen))
    return Episode(query=query, support=[examples[chosen[int(i)]] for i in order])


def _sample_shared_support(examples, query_indices, n_support, rng):
    """One support for the whole batch: covers every query class, excludes all queries."""
    query_set = set(int(i) for i in query_indices)
    pool = [i for i in range(len(examples)) if i not in query_set]
    needed = sorted({examples[i].label for i in query_indices})
    if n_support < len(needed):
        raise InvalidArgumentError(
            f"shared support of size {n_support} cannot cover {len(needed)} query classes"
        )
    chosen = []
    for label in needed:
        members = [i for i in pool if examples[i].label == label]
        if not members:
            raise InsufficientClassError(
                f"class {label} has no non-query members for the shared support"
            )
        chosen.append(members[int(rng.choice(len(members)))])
    rest = [i for i in pool if i not in set(chosen)]
    fill = rng.choice(len(rest), size=n_support - len(chosen), replace=False)
    chosen += [rest[int(i)] for i in fill]
    order = rng.permutation(len(chosen))
    return [examples[chosen[int(i)]] for i in order]


def _episode_targets(labels_matrix, query_labels, class_count, epsilon):
    """Per-episode target distributions.

    With smoothing, the uniform mass is spread over the classes present in
    that episode's support (the query class is always among them), keeping the
    loss finite when a support happens to miss some class entirely.
    """
    n_b = labels_matrix.shape[0]
    targets = np.zeros((n_b, class_count))
    targets[np.arange(n_b), query_labels] = 1.0
    if epsilon > 0.0:
        present = np.zeros((n_b, class_count), dtype=bool)
        present[np.arange(n_b)[:, None], labels_matrix] = True
        targets *= 1.0 - epsilon
        targets += (epsilon / present.sum(axis=1))[:, None] * present
    return targets


def nw_loss_and_grad(model: ExtractorModel, episodes, temperature=1.0, epsilon=0.0):
    """Mean episodic NW cross-entropy and its exact gradient.

    Returns (loss, grads) with grads aligned to ``model.parameters()``.
    """
    if not episodes:
        raise InvalidArgumentError("need at least one episode")
    tau = float(temperature)
    if tau <= 0.0:
        raise InvalidArgumentError(f"temperature must be > 0, got {temperature!r}")
    n_b = len(episodes)
    n_s = len(episodes[0].support)
    if any(len(ep.support) != n_s for ep in episodes):
        raise InvalidArgumentError("episodes in one batch must share a support size")

    x_q = np.stack([ep.query.features for ep in episodes])
    x_s = np.stack([[e.features for e in ep.support] for ep in episodes])
    labels = np.array([[e.label for e in ep.support] for ep in episodes], dtype=np.intp)
    query_labels = np.array([ep.query.label for ep in episodes], dtype=np.intp)
    class_count = int(max(labels.max(), query_labels.max())) + 1

    stacked = np.concatenate([x_q, x_s.reshape(n_b * n_s, -1)], axis=0)
    emb, activations, pre = _forward_cached(model, stacked)
    q = emb[:n_b]
    e = emb[n_b:].reshape(n_b, n_s, -1)

    # overflow on a diverging run yields a non-finite loss, which the
    # training loop turns into a structured DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        diff = q[:, None, :] - e
        dist = np.sqrt((diff * diff).sum(axis=2))
        scores = -dist / tau
        scores -= scores.max(axis=1, keepdims=True)
        exps = np.exp(scores)
        w = exps / exps.sum(axis=1, keepdims=True)

    probs = np.zeros((n_b, class_count))
    np.add.at(probs, (np.arange(n_b)[:, None], labels), w)
    targets = _episode_targets(labels, query_labels, class_count, float(epsilon))

    hot = targets > 0.0
    with np.errstate(divide="ignore"):
        loss_terms = np.where(hot, -targets * np.log(np.where(hot, probs, 1.0)), 0.0)
    loss = float(loss_terms.sum(axis=1).mean())

    # d(loss)/d(probs), zero where the target is zero
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        g = np.zeros_like(probs)
        np.divide(-targets, probs, out=g, where=hot)
        a = g[np.arange(n_b)[:, None], labels]  # d(loss)/d(w_i)
        row_dot = (g * probs).sum(axis=1, keepdims=True)
        d_scores = w * (a - row_dot)
        d_dist = -d_scores / tau
        unit = diff / np.maximum(dist, _DIST_FLOOR)[:, :, None]
        scale = d_dist[:, :, None] * unit / n_b
        d_q = scale.sum(axis=1)
        d_e = -scale
        d_emb = np.concatenate([d_q, d_e.reshape(n_b * n_s, -1)], axis=0)
        return loss, _backward(model, activations, pre, d_emb)


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fc_loss_and_grad(model: ExtractorModel, x, labels, epsilon=0.0):
    """Softmax cross-entropy of the linear-classifier baseline, with gradients."""
    if model.fc is None:
        raise InvalidArgumentError("model has no fc head")
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n = x.shape[0]
    class_count = model.fc[0].shape[1]
    emb, activations, pre = _forward_cached(model, x)
    wc, bc = model.fc
    logits = emb @ wc + bc
    probs = _softmax_rows(logits)

    targets = np.full((n, class_count), float(epsilon) / class_count)
    targets[np.arange(n), labels] += 1.0 - float(epsilon)
    loss = float(-(targets * np.log(np.maximum(probs, 1e-300))).sum(axis=1).mean())

    d_logits = (probs - targets) / n
    grads = _backward(model, activations, pre, d_logits @ wc.T)
    grads.append(emb.T @ d_logits)
    grads.append(d_logits.sum(axis=0))
    return loss, grads


@dataclass
class TrainConfig:
    """Hyperparameters for episodic training; defaults follow the desk-scale protocol."""

    batch_size: int = 32
    support_size: int = 10
    temperature: float = 1.0
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    steps: int = 2000
    lr_decay_steps: tuple = (1000, 1500)
    seed: int = 0
    head: str = "nw"
    label_smoothing: float = 0.0
    hidden: tuple = (64, 64)
    embed_dim: int = 16
    eval_every: int = 500
    shared_support: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.support_size < 2:
            raise InvalidArgumentError("support_size must be >= 2")
        if self.lr < 0:
            raise InvalidArgumentError("lr must be >= 0")
        if self.head not in ("nw", "fc"):
            raise InvalidArgumentError(f"head must be 'nw' or 'fc', got {self.head!r}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise InvalidArgumentError("label_smoothing must lie in [0, 1)")
        if self.temperature <= 0:
            raise InvalidArgumentError("temperature must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_decay_steps"] = list(self.lr_decay_steps)
        d["hidden"] = list(self.hidden)
        return d


def _val_metrics(model, config, train_examples, val_examples, class_count):
    if config.head == "fc":
        x = np.stack([e.features for e in val_examples])
        probs = fc_predict_probs(model, x)
    else:
        support = build_support(
            embed_examples(model, train_examples), InferenceMode.full(), class_count
        )
        feats = np.stack([e.features for e in embed_examples(model, val_examples)])
        probs, _ = batch_predict(feats, support, config.temperature)
    labels = np.array([e.label for e in val_examples], dtype=np.intp)
    error = float(np.mean(probs.argmax(axis=1) != labels))
    ece = expected_calibration_error(probs, labels).ece
    return error, ece


def train(train_set, val_set, config: TrainConfig):
    """Run SGD-with-momentum over episodic batches; returns (model, log).

    The log is a list of dict entries: every step records the train loss, and
    every ``eval_every`` steps (plus the final step) records validation error
    and ECE computed with the current extractor (Full-mode support for the NW
    head, direct softmax for the FC baseline).
    """
    train_examples = list(getattr(train_set, "examples", train_set))
    val_examples = list(getattr(val_set, "examples", val_set))
    if not train_examples:
        raise InsufficientClassError("empty training set")
    class_count = max(e.label for e in train_examples) + 1
    input_dim = train_examples[0].dim

    rng = np.random.default_rng(config.seed)
    model = init_model(
        input_dim, config.hidden, config.embed_dim, rng.integers(2**32),
        head=config.head, class_count=class_count,
    )
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    log = []

    if config.batch_size > len(train_examples):
        raise InvalidArgumentError(
            f"batch_size {config.batch_size} exceeds the {len(train_examples)} training examples"
        )
    for step in range(1, config.steps + 1):
        lr_t = config.lr * (0.1 ** sum(step > m for m in config.lr_decay_steps))
        queries = rng.choice(len(train_examples), size=config.batch_size, replace=False)
        if config.head == "fc":
            x = np.stack([train_examples[int(i)].features for i in queries])
            y = np.array([train_examples[int(i)].label for i in queries], dtype=np.intp)
            loss, grads = fc_loss_and_grad(model, x, y, config.label_smoothing)
        else:
            if config.shared_support:
                shared = _sample_shared_support(
                    train_examples, queries, config.support_size, rng
                )
                episodes = [
                    Episode(query=train_examples[int(i)], support=shared) for i in queries
                ]
            else:
                episodes = [
                    sample_episode(train_examples, int(i), config.support_size, rng)
                    for i in queries
                ]
            loss, grads = nw_loss_and_grad(
                model, episodes, config.temperature, config.label_smoothing
            )
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss!r} at step {step}")
        for p, g, v in zip(params, grads, velocity):
            if config.weight_decay:
                g = g + config.weight_decay * p
            v *= config.momentum
            v += g
            p -= lr_t * v
        entry = {"step": step, "train_loss": loss, "lr": lr_t}
        if val_examples and (step % config.eval_every == 0 or step == config.steps):
            error, ece = _val_metrics(model, config, train_examples, val_examples, class_count)
            entry["val_error"] = error
            entry["val_ece"] = ece
        log.append(entry)
    return model, log


def embed_examples(model: ExtractorModel, examples) -> list[LabeledExample]:
    """Map examples through the extractor, keeping ids and labels."""
    examples = list(getattr(examples, "examples", examples))
    if not examples:
        return []
    emb = forward(model, np.stack([e.features for e in examples]))
    return [
        LabeledExample(id=e.id, features=emb[i], label=e.label)
        for i, e in enumerate(examples)
    ]


def fc_predict_probs(model: ExtractorModel, x) -> np.ndarray:
    """Softmax class probabilities from the FC baseline head."""
    if model.fc is None:
        raise InvalidArgumentError("model has no fc head")
    wc, bc = model.fc
    return _softmax_rows(forward(model, x) @ wc + bc)


def _encode_params(model: ExtractorModel) -> str:
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters())
    return base64.b64encode(blob).decode("ascii")


def save_checkpoint(model: ExtractorModel, path, config: TrainConfig | None = None, extra=None):
    """Write the JSON manifest + base64 float64 parameter blob."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": __version__,
        "head": "fc" if model.fc is not None else "nw",
        "input_dim": model.input_dim,
        "hidden": list(model.hidden_sizes),
        "embed_dim": model.embed_dim,
        "class_count": model.class_count,
        "config": config.to_dict() if config is not None else None,
        "seed": config.seed if config is not None else None,
        "params": _encode_params(model),
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ExtractorModel, dict]:
    """Inverse of save_checkpoint; returns (model, manifest dict)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"not a checkpoint file: format={doc.get('format')!r}")
    raw = np.frombuffer(base64.b64decode(doc["params"]), dtype="<f8")
    shapes = []
    fan_in = doc["input_dim"]
    for width in doc["hidden"]:
        shapes.append((fan_in, width))
        fan_in = width
    shapes.append((fan_in, doc["embed_dim"]))
    if doc["head"] == "fc":
        shapes.append((doc["embed_dim"], doc["class_count"]))
    mats = []
    offset = 0
    for rows, cols in shapes:
        w = raw[offset:offset + rows * cols].reshape(rows, cols)
        offset += rows * cols
        b = raw[offset:offset + cols]
        offset += cols
        mats.append((w.copy(), b.copy()))
    if offset != raw.shape[0]:
        raise ParseError(f"parameter blob has {raw.shape[0]} values, expected {offset}")
    fc = mats.pop() if doc["head"] == "fc" else None
    proj = mats.pop()
    return ExtractorModel(mats, proj, fc=fc), doc
