import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haiteam.nnkit import (
    AdamState,
    DenseNet,
    Gradient,
    adam_step,
    backward,
    finite_diff_check,
    forward,
    init_net,
    load_net,
    save_net,
    trace,
)


def linear_net(W, b, head="softmax"):
    return DenseNet([np.array(W, dtype=float)], [np.array(b, dtype=float)], (), head)


def weighted_output(X, U):
    """Objective sum(U * f(X)) with its analytic gradient."""

    def obj(net):
        tr = trace(net, X)
        return float((tr.output * U).sum()), backward(net, U, tr)

    return obj


class TestForward:
    def test_zero_net_is_uniform(self):
        net = init_net(3, 4, 5, 2, rng=0)
        net.set_params(np.zeros(net.n_params))
        np.testing.assert_allclose(forward(net, np.array([1.0, -2.0, 0.5])), [0.25] * 4)

    def test_hand_softmax(self):
        net = linear_net([[1, 0], [0, 1]], [0, 0])
        e2 = np.exp(2.0)
        np.testing.assert_allclose(forward(net, [2.0, 0.0]), [e2 / (e2 + 1), 1 / (e2 + 1)], rtol=1e-12)

    def test_dimension_mismatch(self):
        net = init_net(3, 2, rng=0)
        with pytest.raises(ValueError, match="expects 3"):
            forward(net, np.ones(4))

    def test_layers_must_compose(self):
        with pytest.raises(ValueError):
            DenseNet([np.zeros((3, 4)), np.zeros((5, 2))], [np.zeros(4), np.zeros(2)], ("relu",))

    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        scale=st.floats(0.0, 50.0),
        act=st.sampled_from(["identity", "relu"]),
    )
    def test_softmax_normalised_and_positive(self, seed, scale, act):
        rng = np.random.default_rng(seed)
        net = init_net(4, 5, 6, 2, act, rng=rng)
        X = rng.normal(size=(7, 4))
        # rescale the last layer so logits reach the requested magnitude
        z = trace(net, X).pre[-1]
        top = np.abs(z).max()
        if top > 0:
            net.weights[-1][:] *= scale / top
            net.biases[-1][:] *= scale / top
        P = forward(net, X)
        assert np.all(P > 0) and np.all(P <= 1)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)

    def test_parameter_order_is_fixed(self):
        net = init_net(2, 3, 4, 1, rng=1)
        flat = net.params()
        expected = np.concatenate([net.weights[0].ravel(), net.biases[0], net.weights[1].ravel(), net.biases[1]])
        np.testing.assert_array_equal(flat, expected)
        assert net.n_params == 2 * 4 + 4 + 4 * 3 + 3


class TestBackward:
    def test_linear_scalar_gradient_is_input(self):
        # f(x) = w.x through an identity-like path: a sigmoid head with upstream 1/(p(1-p))
        # gives exactly d(logit)/dw = x
        net = linear_net([[0.3], [-0.2], [0.5]], [0.0], head="sigmoid")
        x = np.array([[1.5, -2.0, 0.25]])
        tr = trace(net, x)
        p = tr.output
        g = backward(net, 1.0 / (p * (1 - p)), tr)
        np.testing.assert_allclose(g.weights[0][:, 0], x[0], rtol=1e-12)

    def test_zero_upstream_gives_zero_gradient(self):
        net = init_net(3, 4, rng=0)
        X = np.ones((5, 3))
        g = backward(net, np.zeros((5, 4)), trace(net, X))
        assert not np.any(g.flat())

    def test_missing_trace_is_usage_error(self):
        net = init_net(3, 4, rng=0)
        with pytest.raises(RuntimeError):
            backward(net, np.zeros((1, 4)), None)

    @pytest.mark.parametrize("head,out", [("softmax", 4), ("sigmoid", 1), ("sigmoid", 3)])
    @pytest.mark.parametrize("act", ["identity", "relu"])
    @pytest.mark.parametrize("n_hidden", [0, 1, 2])
    def test_matches_finite_differences(self, head, out, act, n_hidden):
        rng = np.random.default_rng(zlib.crc32(f"{head}{out}{act}{n_hidden}".encode()))
        net = init_net(5, out, 6, n_hidden, act, head, rng)
        # random biases keep ReLU pre-activations off the kink at exactly zero
        net.set_params(rng.normal(scale=0.7, size=net.n_params))
        X = rng.normal(size=(8, 5))
        U = rng.normal(size=(8, out))
        assert finite_diff_check(net, weighted_output(X, U)) < 1e-4


class TestFiniteDiffCheck:
    def test_quadratic(self):
        net = init_net(3, 2, 4, 1, rng=3)

        def obj(n):
            th = n.params()
            g = Gradient.zeros_like(n)
            # gradient of ||params||^2 laid out in parameter order
            flat = 2 * th
            pos = 0
            for W, b in zip(g.weights, g.biases):
                W[...] = flat[pos:pos + W.size].reshape(W.shape)
                pos += W.size
                b[...] = flat[pos:pos + b.size]
                pos += b.size
            return float(th @ th), g

        assert finite_diff_check(net, obj) < 1e-6

    def test_constant(self):
        net = init_net(3, 2, rng=0)
        assert finite_diff_check(net, lambda n: (1.0, Gradient.zeros_like(n))) == 0.0


class TestAdam:
    def test_first_step_moves_by_lr(self):
        net = init_net(3, 2, rng=0)
        before = net.params()
        state = AdamState.for_net(net)
        g = Gradient.zeros_like(net)
        g = Gradient([W + 0.7 for W in g.weights], [b + 0.7 for b in g.biases])
        adam_step(net, state, g)
        np.testing.assert_allclose(before - net.params(), 1e-3, rtol=1e-6)
        assert state.step == 1

    def test_zero_gradient_keeps_parameters(self):
        net = init_net(3, 2, rng=0)
        before = net.params()
        state = AdamState.for_net(net)
        adam_step(net, state, Gradient.zeros_like(net))
        np.testing.assert_array_equal(before, net.params())
        assert state.step == 1

    def test_default_learning_rate(self):
        assert AdamState.for_net(init_net(2, 2, rng=0)).lr == 0.001

    def test_accumulators_start_at_zero(self):
        state = AdamState.for_net(init_net(2, 2, rng=0))
        assert not state.m.any() and not state.v.any() and state.step == 0

    def test_non_finite_gradient_rejected(self):
        net = init_net(3, 2, rng=0)
        g = Gradient.zeros_like(net)
        g.weights[0][0, 0] = np.nan
        with pytest.raises(FloatingPointError):
            adam_step(net, AdamState.for_net(net), g)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        a = init_net(3, 2, rng=1)
        b = a.copy()
        g = Gradient([rng.normal(size=W.shape) for W in a.weights], [rng.normal(size=x.shape) for x in a.biases])
        sa, sb = AdamState.for_net(a), AdamState.for_net(b)
        for _ in range(3):
            adam_step(a, sa, g)
            adam_step(b, sb, g)
        assert a.params().tobytes() == b.params().tobytes()


def test_save_load_roundtrip(tmp_path):
    net = init_net(4, 3, 5, 2, "relu", "softmax", rng=2)
    save_net(net, tmp_path / "net.npz")
    back = load_net(tmp_path / "net.npz")
    assert back.activations == net.activations and back.head == net.head
    np.testing.assert_array_equal(back.params(), net.params())
