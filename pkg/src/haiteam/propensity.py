"""Behaviour-policy and expert-assignment estimates used as importance-weight denominators."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .nnkit import AdamState, DenseNet, adam_step, backward_from_logits, forward, init_net, trace
from .simkit import BanditLog, ExpertPool

CONDITION_MODES = (None, "shared", "separate")


def floor_probs(P: np.ndarray, eps: float) -> np.ndarray:
    """Mix with the uniform so every entry is at least ``eps`` and rows still sum to 1."""
    l = P.shape[-1]
    if eps * l >= 1.0:
        raise ValueError(f"floor {eps} too large for {l} outcomes")
    return eps + (1.0 - eps * l) * P


def _fit_classifier(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    seed: int,
    hidden: int,
    n_hidden: int,
    activation: str,
    epochs: int,
    batch_size: int,
    lr: float,
    holdout: float = 0.2,
) -> DenseNet:
    """Softmax classifier by cross-entropy with the epoch picked on a held-out split.

    The output bias starts at the log class frequencies and the last weight
    layer at zero, so training starts from the constant frequency model. The
    epoch with the best held-out log-likelihood is kept; if that model fits
    the full data worse than the frequency model, the frequency model is
    returned instead.
    """
    rng = np.random.default_rng(seed)
    n = len(y)
    net = init_net(X.shape[1], n_classes, hidden, n_hidden, activation, "softmax", rng)
    freq = np.bincount(y, minlength=n_classes) / n
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = np.log(np.maximum(freq, 1e-12))
    constant = net.copy()
    onehot = np.eye(n_classes)[y]
    perm = rng.permutation(n)
    n_val = int(round(holdout * n)) if n >= 20 else 0
    val, fit = (perm[:n_val], perm[n_val:]) if n_val else (perm, perm)

    def loglik(m: DenseNet, idx) -> float:
        p = forward(m, X[idx])[np.arange(len(idx)), y[idx]]
        return float(np.mean(np.log(np.maximum(p, 1e-300))))

    best, best_ll = net.copy(), loglik(net, val)
    state = AdamState.for_net(net, lr=lr)
    for _ in range(epochs):
        order = fit[rng.permutation(len(fit))]
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            tr = trace(net, X[idx])
            adam_step(net, state, backward_from_logits(net, (tr.output - onehot[idx]) / len(idx), tr))
        ll = loglik(net, val)
        if ll > best_ll:
            best, best_ll = net.copy(), ll
    everything = np.arange(n)
    return best if loglik(best, everything) >= loglik(constant, everything) else constant


@dataclass
class BehaviorModel:
    """Estimated ``pi0(a | x)`` or, when conditioned, ``pi0(a | x, h)``."""

    n_actions: int
    n_experts: int
    conditioned: str | None
    nets: list[DenseNet | None]
    constant: list[np.ndarray | None]
    floor: float = 1e-3

    def _inputs(self, X: np.ndarray, experts: np.ndarray | None) -> np.ndarray:
        if self.conditioned == "shared":
            return np.hstack([X, np.eye(self.n_experts)[experts]])
        return X

    def probs(self, X: np.ndarray, experts: np.ndarray | None = None) -> np.ndarray:
        """(n, n_actions) floored action distributions."""
        X = np.atleast_2d(X)
        if self.conditioned is not None and experts is None:
            raise ValueError("conditioned behaviour model needs expert ids")
        if self.conditioned == "separate":
            experts = np.asarray(experts, dtype=int)
            out = np.empty((X.shape[0], self.n_actions))
            for j in range(self.n_experts):
                m = experts == j
                if m.any():
                    out[m] = self._component(j, X[m])
            return floor_probs(out, self.floor)
        Z = self._inputs(X, None if experts is None else np.asarray(experts, dtype=int))
        return floor_probs(self._component(0, Z), self.floor)

    def _component(self, j: int, Z: np.ndarray) -> np.ndarray:
        if self.nets[j] is None:
            return np.broadcast_to(self.constant[j], (Z.shape[0], self.n_actions)).copy()
        return forward(self.nets[j], Z)

    def __call__(self, X, actions, experts=None) -> np.ndarray:
        P = self.probs(X, experts)
        return P[np.arange(P.shape[0]), np.asarray(actions, dtype=int)]


def fit_behavior(
    log: BanditLog,
    conditioned: str | None = None,
    floor: float = 1e-3,
    seed: int = 0,
    hidden: int = 16,
    n_hidden: int = 1,
    activation: str = "relu",
    epochs: int = 60,
    batch_size: int = 64,
    lr: float = 0.01,
) -> BehaviorModel:
    """Fit the logging policy from ``(x, a)`` pairs.

    ``conditioned="shared"`` appends a one-hot expert id to the features;
    ``"separate"`` fits one classifier per expert.
    """
    if conditioned not in CONDITION_MODES:
        raise ValueError(f"conditioned must be one of {CONDITION_MODES}")
    if log.n == 0:
        raise ValueError("cannot fit a behaviour model on an empty log")
    K, l = log.n_experts, log.n_actions
    fit_kw = dict(hidden=hidden, n_hidden=n_hidden, activation=activation, epochs=epochs, batch_size=batch_size, lr=lr)

    def fit_one(X, a, s) -> tuple[DenseNet | None, np.ndarray | None]:
        if np.unique(a).size == 1:
            warnings.warn("behaviour log contains a single action; using a constant distribution", stacklevel=3)
            return None, np.eye(l)[a[0]]
        return _fit_classifier(X, a, l, s, **fit_kw), None

    if conditioned == "separate":
        counts = np.bincount(log.experts, minlength=K)
        if np.any(counts == 0):
            raise ValueError(f"experts {np.flatnonzero(counts == 0).tolist()} have no logged records")
        fitted = [fit_one(log.X[log.experts == j], log.actions[log.experts == j], seed + j) for j in range(K)]
        nets, consts = [f[0] for f in fitted], [f[1] for f in fitted]
    else:
        if conditioned == "shared":
            counts = np.bincount(log.experts, minlength=K)
            if np.any(counts == 0):
                raise ValueError(f"experts {np.flatnonzero(counts == 0).tolist()} have no logged records")
            Z = np.hstack([log.X, np.eye(K)[log.experts]])
        else:
            Z = log.X
        net, const = fit_one(Z, log.actions, seed)
        nets, consts = [net], [const]
    return BehaviorModel(l, K, conditioned, nets, consts, floor)


@dataclass
class AssignmentModel:
    """``d0(h | x)``: known uniform, or a classifier fitted on logged expert ids."""

    n_experts: int
    net: DenseNet | None = None
    floor: float = 1e-3

    def probs(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.net is None:
            return np.full((X.shape[0], self.n_experts), 1.0 / self.n_experts)
        return floor_probs(forward(self.net, X), self.floor)

    def __call__(self, X, experts) -> np.ndarray:
        P = self.probs(X)
        return P[np.arange(P.shape[0]), np.asarray(experts, dtype=int)]


def assignment_model(
    pool: ExpertPool | None = None,
    mode: str = "known-uniform",
    log: BanditLog | None = None,
    floor: float = 1e-3,
    seed: int = 0,
    **fit_kw,
) -> AssignmentModel:
    if mode == "known-uniform":
        K = pool.K if pool is not None else (log.n_experts if log is not None else None)
        if K is None:
            raise ValueError("known-uniform assignment needs the pool size")
        return AssignmentModel(K)
    if mode != "estimated":
        raise ValueError(f"unknown assignment mode {mode!r}")
    if log is None:
        raise ValueError("estimated assignment needs a log with expert ids")
    K = log.n_experts
    if K == 1 or np.unique(log.experts).size == 1:
        return AssignmentModel(K)
    kw = dict(hidden=16, n_hidden=1, activation="relu", epochs=60, batch_size=64, lr=0.01)
    kw.update(fit_kw)
    net = _fit_classifier(log.X, log.experts, K, seed, **kw)
    return AssignmentModel(K, net, floor)


@dataclass
class PropensityEstimates:
    """Everything the objectives divide by.

    ``behavior`` is the marginal ``pi0_hat(a | x)``, ``behavior_by_expert`` the
    expert-conditioned ``pi0_hat(a | x, h)`` (needed for personalised routing),
    and ``assignment`` is ``d0_hat(h | x)``.
    """

    behavior: BehaviorModel
    assignment: AssignmentModel
    behavior_by_expert: BehaviorModel | None = None
    floor: float = 1e-3


def fit_propensities(
    log: BanditLog,
    pool: ExpertPool | None = None,
    conditioned: str | None = "shared",
    assignment: str = "known-uniform",
    floor: float = 1e-3,
    seed: int = 0,
    **fit_kw,
) -> PropensityEstimates:
    behavior = fit_behavior(log, None, floor, seed, **fit_kw)
    by_expert = fit_behavior(log, conditioned, floor, seed + 1, **fit_kw) if conditioned else None
    d0 = assignment_model(pool, assignment, log, floor, seed + 2)
    return PropensityEstimates(behavior, d0, by_expert, floor)
