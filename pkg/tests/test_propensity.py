import warnings

import numpy as np
import pytest

from haiteam.datakit import make_synthetic_multilabel
from haiteam.propensity import assignment_model, fit_behavior, fit_propensities, floor_probs
from haiteam.simkit import BanditLog, generate_log, make_noise_pool


def random_log(n=4000, l=4, K=3, seed=0, d=3):
    """Uniform-random actions and experts, independent of x."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    a = rng.integers(0, l, size=n)
    h = rng.integers(0, K, size=n)
    return BanditLog(np.arange(n), X, h, a, rng.integers(0, 2, n).astype(float),
                     np.full(n, 1 / l), np.full(n, 1 / l), l, K)


def mean_loglik(P, a):
    return float(np.mean(np.log(P[np.arange(len(a)), a])))


class TestFloor:
    def test_floor_and_normalisation(self):
        P = np.array([[1.0, 0.0, 0.0], [0.2, 0.3, 0.5]])
        F = floor_probs(P, 1e-3)
        assert F.min() >= 1e-3
        np.testing.assert_allclose(F.sum(axis=1), 1.0)

    def test_floor_too_large(self):
        with pytest.raises(ValueError):
            floor_probs(np.ones((1, 4)) / 4, 0.3)


class TestBehavior:
    def test_uniform_logging_recovered(self):
        log = random_log()
        bm = fit_behavior(log, seed=1)
        P = bm.probs(log.X)
        assert np.abs(P - 0.25).max() < 0.05

    def test_no_probability_below_floor(self):
        ds = make_synthetic_multilabel(600, 3, 5, 0.0, seed=0, separation=4.0)
        log = generate_log(ds, make_noise_pool([0.99]), seed=0)
        bm = fit_behavior(log, floor=1e-3, seed=0)
        assert bm.probs(log.X).min() >= 1e-3 - 1e-15

    def test_not_worse_than_frequency_baseline(self):
        ds = make_synthetic_multilabel(800, 3, 4, 0.0, seed=2, separation=3.0)
        log = generate_log(ds, make_noise_pool([0.6, 0.8]), seed=0)
        bm = fit_behavior(log, seed=0)
        freq = np.bincount(log.actions, minlength=4) / log.n
        base = mean_loglik(floor_probs(np.tile(freq, (log.n, 1)), 1e-3), log.actions)
        assert mean_loglik(bm.probs(log.X), log.actions) >= base - 1e-12

    def test_learns_informative_behaviour(self):
        ds = make_synthetic_multilabel(1500, 3, 4, 0.0, seed=1, separation=4.0)
        log = generate_log(ds, make_noise_pool([0.9]), seed=0)
        bm = fit_behavior(log, seed=0)
        est = bm(log.X, log.actions)
        assert np.median(est / log.propensity) > 0.8

    def test_single_action_log_warns(self):
        log = random_log(n=50)
        one = BanditLog(log.instance_ids, log.X, log.experts, np.zeros(50, int), log.rewards,
                        log.propensity, log.marginal_propensity, 4, 3)
        with pytest.warns(UserWarning, match="single action"):
            bm = fit_behavior(one)
        np.testing.assert_allclose(bm.probs(one.X[:2]), floor_probs(np.array([[1.0, 0, 0, 0]] * 2), 1e-3))

    @pytest.mark.parametrize("mode", ["shared", "separate"])
    def test_conditioned_modes(self, mode):
        ds = make_synthetic_multilabel(900, 3, 4, 0.0, seed=0, separation=3.0)
        log = generate_log(ds, make_noise_pool([0.3, 0.95]), seed=0)
        bm = fit_behavior(log, conditioned=mode, seed=0)
        P = bm.probs(log.X, log.experts)
        np.testing.assert_allclose(P.sum(axis=1), 1.0)
        # the accurate expert's logged actions get more mass than the noisy expert's
        est = bm(log.X, log.actions, log.experts)
        assert est[(log.experts == 1) & (log.rewards == 1)].mean() > est[(log.experts == 0) & (log.rewards == 1)].mean()

    def test_conditioned_needs_experts(self):
        bm = fit_behavior(random_log(n=200), conditioned="shared", epochs=2)
        with pytest.raises(ValueError):
            bm.probs(np.zeros((1, 3)))

    def test_missing_expert_rejected(self):
        log = random_log(n=100, K=3)
        log = log.take(np.flatnonzero(log.experts != 2))
        with pytest.raises(ValueError, match="no logged records"):
            fit_behavior(log, conditioned="separate")

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            fit_behavior(random_log(n=20), conditioned="both")


class TestAssignment:
    def test_known_uniform(self):
        d0 = assignment_model(make_noise_pool([0.6, 0.7, 0.8]))
        np.testing.assert_allclose(d0.probs(np.zeros((5, 2))), 1 / 3)

    def test_single_expert(self):
        d0 = assignment_model(make_noise_pool([0.6]))
        np.testing.assert_allclose(d0(np.zeros((2, 2)), [0, 0]), 1.0)

    def test_estimated_on_uniform_log(self):
        log = random_log(n=3000)
        d0 = assignment_model(mode="estimated", log=log, seed=0)
        assert np.abs(d0.probs(log.X) - 1 / 3).max() < 0.1

    def test_estimated_needs_log(self):
        with pytest.raises(ValueError):
            assignment_model(mode="estimated")


def test_fit_propensities_bundle():
    ds = make_synthetic_multilabel(600, 3, 4, 0.0, seed=0, separation=3.0)
    pool = make_noise_pool([0.6, 0.8])
    log = generate_log(ds, pool, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        est = fit_propensities(log, pool, conditioned="shared", seed=0)
    assert est.behavior_by_expert is not None
    assert np.all(est.behavior(log.X, log.actions) >= 1e-3)
    np.testing.assert_allclose(est.assignment(log.X, log.experts), 0.5)
