import math

import numpy as np
import pytest

from nwkit.core import (
    LabeledExample,
    OneHotLabel,
    PredictionResult,
    SupportSet,
    WeightVector,
    batch_predict,
    cross_entropy,
    nw_predict,
    nw_weights,
    pairwise_distances,
    top_label_match_rate,
)
from nwkit.errors import (
    DimensionMismatchError,
    EmptySupportError,
    InvalidArgumentError,
    InvalidTemperatureError,
)

# the canonical two-point setting: query [0], supports [0] (label 0) and [1] (label 1)
TWO_POINT = SupportSet(
    [LabeledExample("a", [0.0], 0), LabeledExample("b", [1.0], 1)], class_count=2
)

# hand-evaluated two-term softmax oracle: distances (0, 1), tau 1
W0 = 1.0 / (1.0 + math.exp(-1.0))
W1 = math.exp(-1.0) / (1.0 + math.exp(-1.0))


def random_support(rng, n, dim, class_count):
    entries = [
        LabeledExample(f"s{i}", rng.normal(size=dim), int(rng.integers(class_count)))
        for i in range(n)
    ]
    return SupportSet(entries, class_count)


class TestPairwiseDistances:
    def test_unit_interval(self):
        assert np.allclose(pairwise_distances([0.0], TWO_POINT), [0.0, 1.0])

    def test_three_four_five(self):
        support = SupportSet([LabeledExample("o", [0.0, 0.0], 0)], 1)
        assert pairwise_distances([3.0, 4.0], support) == pytest.approx([5.0])

    def test_matches_coordinate_loop_oracle(self):
        # independent oracle: per-coordinate sum of squares, then sqrt
        rng = np.random.default_rng(0)
        for _ in range(20):
            support = random_support(rng, 5, 8, 3)
            q = rng.normal(size=8)
            got = pairwise_distances(q, support)
            for i, entry in enumerate(support.entries):
                acc = 0.0
                for a, b in zip(q, entry.features):
                    acc += (a - b) ** 2
                assert abs(got[i] - math.sqrt(acc)) <= 1e-12

    def test_dimension_mismatch_names_both(self):
        with pytest.raises(DimensionMismatchError, match="2.*1|1.*2"):
            pairwise_distances([0.0, 0.0], TWO_POINT)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        support = random_support(rng, 20, 4, 2)
        assert np.all(pairwise_distances(rng.normal(size=4), support) >= 0.0)


class TestNwWeights:
    def test_two_term_oracle(self):
        wv = nw_weights([0.0, 1.0], 1.0)
        assert wv.weights == pytest.approx([W0, W1], abs=1e-12)
        assert wv.weights[0] == pytest.approx(0.73106, abs=1e-5)
        assert wv.weights[1] == pytest.approx(0.26894, abs=1e-5)

    def test_equal_distances_uniform(self):
        for value in (0.0, 3.7, 1e6):
            for tau in (0.01, 1.0, 50.0):
                wv = nw_weights([value] * 4, tau)
                assert wv.weights == pytest.approx([0.25] * 4)

    def test_large_tau_limit(self):
        wv = nw_weights([0.0, 1.0], 1e6)
        assert np.all(np.abs(wv.weights - 0.5) <= 1e-6)

    def test_tiny_tau_concentrates_on_minimum(self):
        wv = nw_weights([0.3, 0.1, 0.9], 1e-6)
        assert wv.weights == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)

    def test_invalid_temperature(self):
        for tau in (0.0, -1.0, math.nan):
            with pytest.raises(InvalidTemperatureError):
                nw_weights([0.0, 1.0], tau)

    def test_empty_distances(self):
        with pytest.raises(EmptySupportError):
            nw_weights([], 1.0)

    def test_rejects_bad_distances(self):
        with pytest.raises(InvalidArgumentError):
            nw_weights([0.0, -1.0], 1.0)
        with pytest.raises(InvalidArgumentError):
            nw_weights([0.0, math.inf], 1.0)

    def test_no_overflow_for_large_distances(self):
        wv = nw_weights([1e6, 1e6 + 1.0], 1.0)
        assert np.all(np.isfinite(wv.weights))
        assert wv.weights == pytest.approx([W0, W1], abs=1e-12)

    def test_simplex_property(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            d = rng.uniform(0.0, 50.0, size=rng.integers(1, 30))
            tau = float(rng.uniform(0.05, 20.0))
            w = nw_weights(d, tau).weights
            assert np.all(w >= 0.0) and np.all(w <= 1.0)
            assert abs(w.sum() - 1.0) <= 1e-9

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            d = rng.uniform(0.0, 10.0, size=8)
            shift = float(rng.uniform(0.0, 100.0))
            base = nw_weights(d, 2.0).weights
            shifted = nw_weights(d + shift, 2.0).weights
            assert np.max(np.abs(base - shifted)) <= 1e-12

    def test_strict_monotonicity(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            d = np.sort(rng.uniform(0.0, 10.0, size=6))
            d += np.arange(6) * 1e-3  # enforce strict gaps
            w = nw_weights(d, 1.0).weights
            assert np.all(np.diff(w) < 0.0)


class TestNwPredict:
    def test_two_point_oracle(self):
        pred = nw_predict(np.array([0.0]), TWO_POINT, 1.0)
        assert pred.probs == pytest.approx([W0, W1], abs=1e-12)

    def test_single_element_support(self):
        support = SupportSet([LabeledExample("only", [5.0, 5.0], 2)], class_count=4)
        pred = nw_predict([0.0, 0.0], support, 1.0)
        assert np.array_equal(pred.probs, [0.0, 0.0, 1.0, 0.0])
        assert pred.weights.weights == pytest.approx([1.0])

    def test_all_same_label(self):
        entries = [LabeledExample(f"e{i}", [float(i)], 1) for i in range(6)]
        pred = nw_predict([2.5], SupportSet(entries, 3), 0.7)
        assert pred.probs[1] == pytest.approx(1.0, abs=1e-12)
        assert pred.probs[0] == 0.0 and pred.probs[2] == 0.0

    def test_reconstruction_identity_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            support = random_support(rng, int(rng.integers(2, 25)), 4, 5)
            pred = nw_predict(rng.normal(size=4), support, float(rng.uniform(0.1, 5.0)))
            w = pred.weights.weights
            for c in range(5):
                mask = support.labels == c
                expected = w[mask].sum() if mask.any() else 0.0
                assert pred.probs[c] == expected  # bit-exact, same masked sum

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        support = random_support(rng, 12, 3, 4)
        q = rng.normal(size=3)
        pred = nw_predict(q, support, 1.3)
        perm = rng.permutation(12)
        shuffled = support.subset(perm)
        pred_p = nw_predict(q, shuffled, 1.3)
        assert np.max(np.abs(pred_p.weights.weights - pred.weights.weights[perm])) <= 1e-12
        assert np.max(np.abs(pred_p.probs - pred.probs)) <= 1e-12

    def test_labeled_example_query_carries_id(self):
        pred = nw_predict(LabeledExample("q7", [0.5], 0), TWO_POINT, 1.0)
        assert pred.query_id == "q7"

    def test_batch_matches_single(self):
        rng = np.random.default_rng(7)
        support = random_support(rng, 15, 6, 3)
        queries = rng.normal(size=(9, 6))
        probs, weights = batch_predict(queries, support, 0.8)
        for i in range(9):
            single = nw_predict(queries[i], support, 0.8)
            assert np.max(np.abs(probs[i] - single.probs)) <= 1e-12
            assert np.max(np.abs(weights[i] - single.weights.weights)) <= 1e-12


class TestCrossEntropy:
    def test_one_hot_is_zero(self):
        pred = PredictionResult(
            probs=np.array([0.0, 1.0]), weights=WeightVector(np.array([1.0]), 1.0)
        )
        assert cross_entropy(pred, 1) == 0.0

    def test_two_point_value(self):
        pred = nw_predict(np.array([0.0]), TWO_POINT, 1.0)
        assert cross_entropy(pred, 0) == pytest.approx(-math.log(W0), abs=1e-12)
        assert cross_entropy(pred, 0) == pytest.approx(0.31326, abs=1e-5)

    def test_zero_probability_is_inf(self):
        pred = PredictionResult(
            probs=np.array([1.0, 0.0]), weights=WeightVector(np.array([1.0]), 1.0)
        )
        assert cross_entropy(pred, 1) == math.inf

    def test_label_out_of_range(self):
        pred = nw_predict(np.array([0.0]), TWO_POINT, 1.0)
        with pytest.raises(InvalidArgumentError):
            cross_entropy(pred, 2)


class TestTopLabelMatchRate:
    def test_all_matching(self):
        entries = [LabeledExample(f"e{i}", [float(i)], 2) for i in range(5)]
        support = SupportSet(entries, 3)
        query = LabeledExample("q", [0.0], 2)
        for top_n in (1, 3, 5):
            assert top_label_match_rate(query, support, 1.0, top_n) == 1.0

    def test_two_point_top1_and_top2(self):
        query = LabeledExample("q", [0.0], 0)
        assert top_label_match_rate(query, TWO_POINT, 1.0, 1) == 1.0
        assert top_label_match_rate(query, TWO_POINT, 1.0, 2) == 0.5

    def test_zero_top_n(self):
        with pytest.raises(InvalidArgumentError):
            top_label_match_rate(LabeledExample("q", [0.0], 0), TWO_POINT, 1.0, 0)

    def test_top_n_exceeds_support(self):
        with pytest.raises(InvalidArgumentError):
            top_label_match_rate(LabeledExample("q", [0.0], 0), TWO_POINT, 1.0, 3)

    def test_tie_break_by_entry_order(self):
        # both entries at distance 1: equal weights, entry order decides the top-1
        entries = [LabeledExample("x", [1.0], 1), LabeledExample("y", [-1.0], 0)]
        support = SupportSet(entries, 2)
        query = LabeledExample("q", [0.0], 1)
        assert top_label_match_rate(query, support, 1.0, 1) == 1.0


class TestDomainTypes:
    def test_one_hot_materialization(self):
        v = OneHotLabel(class_count=4, hot_index=2).to_vector()
        assert np.array_equal(v, [0.0, 0.0, 1.0, 0.0])
        assert v.sum() == 1.0

    def test_one_hot_range_check(self):
        with pytest.raises(InvalidArgumentError):
            OneHotLabel(class_count=3, hot_index=3)

    def test_labeled_example_rejects_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            LabeledExample("bad", [0.0, math.nan], 0)

    def test_support_set_rejects_empty(self):
        with pytest.raises(EmptySupportError):
            SupportSet([], 2)

    def test_support_set_rejects_mixed_dims(self):
        with pytest.raises(DimensionMismatchError):
            SupportSet(
                [LabeledExample("a", [0.0], 0), LabeledExample("b", [0.0, 1.0], 0)], 1
            )

    def test_class_index_partitions_positions(self):
        rng = np.random.default_rng(8)
        support = random_support(rng, 30, 2, 4)
        seen = sorted(p for positions in support.class_index.values() for p in positions)
        assert seen == list(range(30))
        for c, positions in support.class_index.items():
            assert all(support.labels[p] == c for p in positions)

    def test_weight_vector_validates_simplex(self):
        with pytest.raises(InvalidArgumentError):
            WeightVector(np.array([0.7, 0.7]), 1.0)

    def test_prediction_result_validates(self):
        with pytest.raises(InvalidArgumentError):
            PredictionResult(
                probs=np.array([0.5, 0.2]), weights=WeightVector(np.array([1.0]), 1.0)
            )
