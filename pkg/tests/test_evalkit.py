import numpy as np
import pytest

from haiteam.datakit import MultiLabelDataset
from haiteam.evalkit import evaluate, exact_policy_value, greedy_actions, route, summarize
from haiteam.nnkit import DenseNet
from haiteam.simkit import make_noise_pool
from haiteam.trainkit import TrainedSystem, human_system


def linear(W, b, head="softmax"):
    return DenseNet([np.array(W, float)], [np.array(b, float)], (), head)


def dataset():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]])
    labels = (frozenset({0}), frozenset({1}), frozenset({0, 1}), frozenset({1}))
    return MultiLabelDataset(X, labels, 2)


POLICY = linear([[5.0, 0.0], [0.0, 5.0]], [0.0, 0.0])


class TestGreedy:
    def test_argmax(self):
        np.testing.assert_array_equal(greedy_actions(POLICY, dataset().X), [0, 1, 0, 1])

    def test_ties_go_to_lowest_index(self):
        flat = linear(np.zeros((2, 3)), np.zeros(3))
        np.testing.assert_array_equal(greedy_actions(flat, np.ones((4, 2))), 0)


class TestRoute:
    def test_ao_always_algorithm(self):
        ao = TrainedSystem("AO", POLICY)
        np.testing.assert_array_equal(route(ao, dataset().X, 3, np.random.default_rng(0)), 3)

    def test_binary_router_threshold(self):
        # logit = x0 so p > 0.5 exactly when x0 > 0; p = 0.5 stays with the algorithm
        rt = linear([[1.0], [0.0]], [0.0], "sigmoid")
        ts = TrainedSystem("TS", POLICY, rt, n_experts=2)
        X = np.array([[2.0, 0.0], [0.0, 0.0], [-2.0, 0.0]])
        dest = route(ts, X, 2, np.random.default_rng(0))
        assert dest[0] in (0, 1) and dest[1] == 2 and dest[2] == 2

    def test_personalized_tie_goes_to_algorithm(self):
        rt = linear(np.zeros((2, 3)), [0.0, 0.0, 0.0])
        jcp = TrainedSystem("JCP", POLICY, rt, n_experts=2)
        np.testing.assert_array_equal(route(jcp, dataset().X, 2, np.random.default_rng(0)), 2)

    def test_personalized_argmax_expert(self):
        rt = linear(np.zeros((2, 3)), [0.0, 3.0, 1.0])
        jcp = TrainedSystem("JCP", POLICY, rt, n_experts=2)
        np.testing.assert_array_equal(route(jcp, dataset().X, 2, np.random.default_rng(0)), 1)

    def test_human_uniform(self):
        dest = route(human_system(4), np.zeros((4000, 2)), 4, np.random.default_rng(0))
        assert np.all(np.abs(np.bincount(dest, minlength=5)[:4] - 1000) < 150)


class TestEvaluate:
    def test_ao_counts_correct_labels(self):
        res = evaluate(TrainedSystem("AO", POLICY), dataset(), make_noise_pool([1.0]))
        assert res.total == res.raw == 4.0
        assert res.human_fraction == 0.0 and res.cost_paid == 0.0
        np.testing.assert_array_equal(res.routed, [0, 4])

    def test_human_pays_cost(self):
        res = evaluate(human_system(2), dataset(), make_noise_pool([1.0, 1.0], cost=[0.1, 0.3]), seed=3)
        assert res.raw == 4.0
        assert res.cost_paid == pytest.approx(0.1 * res.routed[0] + 0.3 * res.routed[1])
        assert res.total == pytest.approx(res.raw - res.cost_paid)
        assert res.human_fraction == 1.0

    def test_same_seed_same_result(self):
        pool = make_noise_pool([0.5, 0.7])
        a = evaluate(human_system(2), dataset(), pool, seed=1)
        b = evaluate(human_system(2), dataset(), pool, seed=1)
        assert a.total == b.total and np.array_equal(a.routed, b.routed)


class TestExactValue:
    def test_stochastic_value(self):
        ds = dataset()
        uniform = linear(np.zeros((2, 2)), np.zeros(2))
        assert exact_policy_value(uniform, ds) == pytest.approx((0.5 + 0.5 + 1.0 + 0.5) / 4)

    def test_deterministic_value(self):
        always_first = linear(np.zeros((2, 2)), [1.0, 0.0])
        assert exact_policy_value(POLICY, dataset(), deterministic=True) == 1.0
        assert exact_policy_value(always_first, dataset(), deterministic=True) == 0.5


class TestSummarize:
    def test_mean_and_stderr(self):
        s = summarize([1.0, 2.0, 3.0, 4.0])
        assert s.mean == 2.5 and s.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
        assert str(s) == "2.5±0.6"

    def test_needs_two(self):
        with pytest.raises(ValueError):
            summarize([1.0])
