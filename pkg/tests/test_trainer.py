import json
import math

import numpy as np
import pytest

from nwkit.core import LabeledExample, cross_entropy, nw_predict
from nwkit.data import generate_blobs
from nwkit.errors import DivergenceError, InsufficientClassError, InvalidArgumentError
from nwkit.support import InferenceMode, build_support
from nwkit.trainer import (
    Episode,
    ExtractorModel,
    TrainConfig,
    embed_examples,
    fc_loss_and_grad,
    fc_predict_probs,
    forward,
    init_model,
    load_checkpoint,
    nw_loss_and_grad,
    sample_episode,
    save_checkpoint,
    train,
)


def tiny_model(seed=0, n=3, hidden=(4,), d=2):
    return init_model(n, hidden, d, seed)


def random_episodes(rng, model, n_b=2, n_s=3, c=2):
    episodes = []
    for e in range(n_b):
        label = int(rng.integers(c))
        support = [
            LabeledExample(f"ep{e}s0", rng.normal(size=model.input_dim), label)
        ]
        for i in range(1, n_s):
            support.append(
                LabeledExample(f"ep{e}s{i}", rng.normal(size=model.input_dim), int(rng.integers(c)))
            )
        episodes.append(
            Episode(query=LabeledExample(f"ep{e}q", rng.normal(size=model.input_dim), label),
                    support=support)
        )
    return episodes


def flatten_params(model):
    return np.concatenate([p.ravel() for p in model.parameters()])


def numeric_gradient(loss_fn, model, h=1e-5):
    """Central finite differences over every parameter; the gradient oracle."""
    grads = []
    for p in model.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = loss_fn()
            p[idx] = orig - h
            down = loss_fn()
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


class TestForward:
    def test_zero_model_gives_zero_embedding(self):
        model = ExtractorModel(
            [(np.zeros((3, 4)), np.zeros(4))], (np.zeros((4, 2)), np.zeros(2))
        )
        out = forward(model, np.random.default_rng(0).normal(size=(5, 3)))
        assert np.array_equal(out, np.zeros((5, 2)))

    def test_identity_projection_no_hidden(self):
        model = ExtractorModel([], (np.eye(3), np.zeros(3)))
        x = np.random.default_rng(1).normal(size=(4, 3))
        assert np.array_equal(forward(model, x), x)

    def test_matches_per_neuron_loop_oracle(self):
        rng = np.random.default_rng(2)
        model = init_model(3, (4, 5), 2, seed=7)
        x = rng.normal(size=(6, 3))
        got = forward(model, x)
        # naive per-neuron loop oracle
        for r in range(x.shape[0]):
            h = list(x[r])
            for w, b in model.layers:
                nxt = []
                for j in range(w.shape[1]):
                    acc = b[j]
                    for i in range(w.shape[0]):
                        acc += h[i] * w[i, j]
                    nxt.append(max(acc, 0.0))
                h = nxt
            wp, bp = model.projection
            out = []
            for j in range(wp.shape[1]):
                acc = bp[j]
                for i in range(wp.shape[0]):
                    acc += h[i] * wp[i, j]
                out.append(acc)
            assert np.max(np.abs(got[r] - np.array(out))) <= 1e-12

    def test_dimension_mismatch(self):
        model = tiny_model()
        with pytest.raises(Exception, match="shape|dimension"):
            forward(model, np.zeros((2, 5)))


class TestSampleEpisode:
    def make_set(self, per_class=3, classes=3, dim=2, seed=0):
        rng = np.random.default_rng(seed)
        return [
            LabeledExample(f"x{c}-{i}", rng.normal(size=dim), c)
            for c in range(classes)
            for i in range(per_class)
        ]

    def test_construction_invariants(self):
        examples = self.make_set(per_class=2, classes=2)
        rng = np.random.default_rng(3)
        for _ in range(200):
            ep = sample_episode(examples, 0, 2, rng)
            ids = [e.id for e in ep.support]
            assert examples[0].id not in ids
            assert examples[0].label in [e.label for e in ep.support]
            assert len(ids) == len(set(ids)) == 2

    def test_deterministic_sequence(self):
        examples = self.make_set()
        seq_a = [sample_episode(examples, 1, 4, np.random.default_rng(9)) for _ in range(1)]
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(42)
            runs.append(
                [[e.id for e in sample_episode(examples, i % 9, 4, rng).support] for i in range(50)]
            )
        assert runs[0] == runs[1]

    def test_single_member_class_fails(self):
        examples = self.make_set(per_class=2, classes=2) + [
            LabeledExample("lone", [9.0, 9.0], 2)
        ]
        with pytest.raises(InsufficientClassError):
            sample_episode(examples, 4, 2, np.random.default_rng(0))

    def test_inclusion_frequency_matches_analytic_oracle(self):
        # analytic oracle: with m same-class alternatives and M non-query
        # examples, P(same-class e in S) = 1/m + (1 - 1/m)(Ns - 1)/(M - 1),
        # P(different-class e in S) = (Ns - 1)/(M - 1)
        examples = self.make_set(per_class=10, classes=4, seed=5)
        n_s, trials = 10, 10000
        query_index = 0
        m, big_m = 9, 39
        p_same = 1 / m + (1 - 1 / m) * (n_s - 1) / (big_m - 1)
        p_diff = (n_s - 1) / (big_m - 1)
        counts = {e.id: 0 for e in examples}
        rng = np.random.default_rng(123)
        for _ in range(trials):
            for e in sample_episode(examples, query_index, n_s, rng).support:
                counts[e.id] += 1
        for i, e in enumerate(examples):
            if i == query_index:
                assert counts[e.id] == 0
                continue
            p = p_same if e.label == examples[query_index].label else p_diff
            sigma = math.sqrt(p * (1 - p) / trials)
            assert abs(counts[e.id] / trials - p) <= 3 * sigma


class TestNwLossAndGrad:
    def test_gradient_matches_finite_differences(self):
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            model = tiny_model(seed=200 + seed)
            episodes = random_episodes(rng, model, n_b=2, n_s=3)
            _, analytic = nw_loss_and_grad(model, episodes, temperature=1.0)
            numeric = numeric_gradient(
                lambda: nw_loss_and_grad(model, episodes, temperature=1.0)[0], model
            )
            assert max_relative_error(analytic, numeric) <= 1e-4

    def test_gradient_with_smoothing_matches_finite_differences(self):
        rng = np.random.default_rng(300)
        model = tiny_model(seed=301)
        episodes = random_episodes(rng, model, n_b=2, n_s=4, c=3)
        _, analytic = nw_loss_and_grad(model, episodes, temperature=0.8, epsilon=0.1)
        numeric = numeric_gradient(
            lambda: nw_loss_and_grad(model, episodes, temperature=0.8, epsilon=0.1)[0], model
        )
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_coincident_query_and_support_point(self):
        model = tiny_model(seed=4)
        shared = np.array([0.3, -0.2, 1.1])
        episode = Episode(
            query=LabeledExample("q", shared, 0),
            support=[
                LabeledExample("dup", shared.copy(), 0),
                LabeledExample("other", [1.0, 2.0, 3.0], 1),
            ],
        )
        loss, grads = nw_loss_and_grad(model, [episode], temperature=1.0)
        assert math.isfinite(loss)
        assert all(np.all(np.isfinite(g)) for g in grads)

    def test_all_same_class_support_zero_loss_zero_grad(self):
        rng = np.random.default_rng(5)
        model = tiny_model(seed=6)
        episode = Episode(
            query=LabeledExample("q", rng.normal(size=3), 1),
            support=[LabeledExample(f"s{i}", rng.normal(size=3), 1) for i in range(4)],
        )
        loss, grads = nw_loss_and_grad(model, [episode], temperature=1.0)
        assert abs(loss) <= 1e-12
        assert all(np.max(np.abs(g)) <= 1e-12 for g in grads)

    def test_loss_is_mean_nll_of_nw_predictions(self):
        # independent recompute: embed, predict, take -log f^y per episode
        rng = np.random.default_rng(7)
        model = tiny_model(seed=8)
        episodes = random_episodes(rng, model, n_b=4, n_s=5, c=3)
        loss, _ = nw_loss_and_grad(model, episodes, temperature=1.3)
        per_episode = []
        for ep in episodes:
            support = build_support(embed_examples(model, ep.support), InferenceMode.full(), 3)
            [q] = embed_examples(model, [ep.query])
            pred = nw_predict(q.features, support, 1.3)
            per_episode.append(cross_entropy(pred, ep.query.label))
        assert loss >= 0.0
        assert abs(loss - float(np.mean(per_episode))) <= 1e-12

    def test_episode_invariant_enforced(self):
        q = LabeledExample("q", [0.0, 0.0, 0.0], 0)
        with pytest.raises(InvalidArgumentError):
            Episode(query=q, support=[q])
        with pytest.raises(InvalidArgumentError):
            Episode(query=q, support=[LabeledExample("s", [1.0, 1.0, 1.0], 1)])


class TestFcHead:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        model = init_model(3, (4,), 2, seed=10, head="fc", class_count=3)
        x = rng.normal(size=(5, 3))
        y = rng.integers(3, size=5)
        _, analytic = fc_loss_and_grad(model, x, y, epsilon=0.1)
        numeric = numeric_gradient(lambda: fc_loss_and_grad(model, x, y, epsilon=0.1)[0], model)
        assert max_relative_error(analytic, numeric) <= 1e-4

    def test_probs_are_simplex(self):
        rng = np.random.default_rng(11)
        model = init_model(3, (4,), 2, seed=12, head="fc", class_count=4)
        probs = fc_predict_probs(model, rng.normal(size=(6, 3)))
        assert probs.shape == (6, 4)
        assert np.allclose(probs.sum(axis=1), 1.0)


def blob_examples(seed=0, per_class=20):
    data = generate_blobs(3, per_class, 2, separation=6.0, noise_sd=1.0, seed=seed)
    return data.examples


class TestTrain:
    def small_config(self, **kw):
        base = dict(
            batch_size=8, support_size=4, steps=5, lr=1e-3, momentum=0.9,
            weight_decay=1e-4, lr_decay_steps=(3,), seed=5, hidden=(8,),
            embed_dim=2, eval_every=5,
        )
        base.update(kw)
        return TrainConfig(**base)

    def test_lr_zero_leaves_parameters_unchanged(self):
        examples = blob_examples()
        model, _ = train(examples, [], self.small_config(lr=0.0, steps=4))
        reference, _ = train(examples, [], self.small_config(lr=0.0, steps=0))
        for a, b in zip(model.parameters(), reference.parameters()):
            assert np.array_equal(a, b)

    def test_single_step_matches_hand_applied_gradient(self):
        examples = blob_examples(seed=1)
        config = self.small_config(momentum=0.0, weight_decay=0.0, steps=1, lr=0.01)
        model, _ = train(examples, [], config)
        # replay the rng chain: init draw, then the query draw of step 1
        rng = np.random.default_rng(config.seed)
        reference = init_model(2, config.hidden, config.embed_dim, rng.integers(2**32))
        queries = rng.choice(len(examples), size=config.batch_size, replace=False)
        episodes = [
            sample_episode(examples, int(i), config.support_size, rng) for i in queries
        ]
        _, grads = nw_loss_and_grad(reference, episodes, config.temperature, 0.0)
        for p, g in zip(reference.parameters(), grads):
            p -= config.lr * g
        for a, b in zip(model.parameters(), reference.parameters()):
            assert np.max(np.abs(a - b)) <= 1e-12

    def test_weight_decay_zero_is_plain_momentum_sgd(self):
        examples = blob_examples(seed=2)
        config = self.small_config(weight_decay=0.0, steps=3, lr=0.01, momentum=0.9)
        model, _ = train(examples, [], config)
        rng = np.random.default_rng(config.seed)
        reference = init_model(2, config.hidden, config.embed_dim, rng.integers(2**32))
        params = reference.parameters()
        velocity = [np.zeros_like(p) for p in params]
        for step in range(1, 4):
            lr_t = config.lr * (0.1 ** sum(step > m for m in config.lr_decay_steps))
            queries = rng.choice(len(examples), size=config.batch_size, replace=False)
            episodes = [
                sample_episode(examples, int(i), config.support_size, rng) for i in queries
            ]
            _, grads = nw_loss_and_grad(reference, episodes, config.temperature, 0.0)
            for p, g, v in zip(params, grads, velocity):
                v *= config.momentum
                v += g
                p -= lr_t * v
        for a, b in zip(model.parameters(), reference.parameters()):
            assert np.array_equal(a, b)

    def test_deterministic_given_seed(self):
        examples = blob_examples(seed=3)
        val = blob_examples(seed=4, per_class=5)
        a, log_a = train(examples, val, self.small_config(steps=6))
        b, log_b = train(examples, val, self.small_config(steps=6))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)
        assert log_a == log_b

    def test_divergence_guard(self):
        examples = blob_examples(seed=5)
        with pytest.raises(DivergenceError, match="step"):
            train(examples, [], self.small_config(lr=1e12, steps=50))

    def test_log_contains_val_metrics_on_final_step(self):
        examples = blob_examples(seed=6)
        val = blob_examples(seed=7, per_class=5)
        _, log = train(examples, val, self.small_config(steps=5, eval_every=100))
        assert "val_error" in log[-1] and "val_ece" in log[-1]
        assert all("train_loss" in entry for entry in log)

    def test_shared_support_mode(self):
        examples = blob_examples(seed=8)
        model, log = train(examples, [], self.small_config(steps=3, shared_support=True))
        assert len(log) == 3
        assert all(math.isfinite(entry["train_loss"]) for entry in log)

    def test_fc_head_training(self):
        examples = blob_examples(seed=9)
        val = blob_examples(seed=10, per_class=5)
        model, log = train(examples, val, self.small_config(steps=5, head="fc"))
        assert model.fc is not None
        assert "val_error" in log[-1]


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        config = TrainConfig(steps=0, seed=3, hidden=(4, 3), embed_dim=2)
        model = init_model(5, (4, 3), 2, seed=44)
        path = tmp_path / "model.json"
        save_checkpoint(model, path, config, extra={"class_count": 3})
        loaded, manifest = load_checkpoint(path)
        for a, b in zip(model.parameters(), loaded.parameters()):
            assert np.array_equal(a, b)
        assert manifest["hidden"] == [4, 3]
        assert manifest["class_count"] == 3
        path2 = tmp_path / "model2.json"
        save_checkpoint(loaded, path2, config, extra={"class_count": 3})
        assert path.read_bytes() == path2.read_bytes()

    def test_fc_round_trip(self, tmp_path):
        model = init_model(3, (4,), 2, seed=45, head="fc", class_count=5)
        path = tmp_path / "fc.json"
        save_checkpoint(model, path)
        loaded, manifest = load_checkpoint(path)
        assert manifest["head"] == "fc"
        assert loaded.fc is not None
        for a, b in zip(model.parameters(), loaded.parameters()):
            assert np.array_equal(a, b)

    def test_rejects_non_checkpoint(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(Exception, match="checkpoint"):
            load_checkpoint(path)
