"""Simulated human decision-makers and observational bandit logs.

Two behaviour models are provided: a proxy classifier fitted on a slice of
fully labelled data, and a uniform-noise expert that is right with
probability ``rho``. A third, rule-based kind backs the 2-D compliance example.
Every expert exposes its full action distribution, so logged propensities are
known exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .datakit import MultiLabelDataset, compliance_rule
from .nnkit import AdamState, adam_step, backward_from_logits, forward, init_net, trace

EXPERT_KINDS = ("noise", "proxy", "rule")
CostFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Expert:
    """One simulated decision-maker.

    ``cost`` is either a constant (reward units) or a function of the context
    batch returning one cost per row.
    """

    kind: str
    rho: float = 1.0
    scorer: object | None = None
    rule: Callable[[np.ndarray], np.ndarray] | None = None
    cost: float | CostFn = 0.3
    name: str = ""

    def __post_init__(self):
        if self.kind not in EXPERT_KINDS:
            raise ValueError(f"unknown expert kind {self.kind!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.kind == "proxy" and self.scorer is None:
            raise ValueError("proxy expert needs a fitted scorer")
        if self.kind == "rule" and self.rule is None:
            raise ValueError("rule expert needs a decision rule")
        if not callable(self.cost) and self.cost < 0:
            raise ValueError("cost must be non-negative")

    def cost_at(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if callable(self.cost):
            c = np.asarray(self.cost(X), dtype=float)
            if np.any(c < 0):
                raise ValueError("cost function returned a negative cost")
            return np.broadcast_to(c, (X.shape[0],)).copy()
        return np.full(X.shape[0], float(self.cost))

    def action_probs(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Decision distribution per row; ``Y`` is the true label indicator matrix."""
        X = np.atleast_2d(X)
        Y = np.atleast_2d(Y).astype(bool)
        n, l = Y.shape
        if self.kind == "noise":
            return noise_expert_probs(self.rho, Y)
        if self.kind == "rule":
            a = np.asarray(self.rule(X), dtype=int)
            if self.rho == 1.0 or l == 1:
                P = np.zeros((n, l))
                P[np.arange(n), a] = 1.0
                return P
            P = np.full((n, l), (1.0 - self.rho) / (l - 1))
            P[np.arange(n), a] = self.rho
            return P
        scores = forward(self.scorer, X)
        return scores / scores.sum(axis=1, keepdims=True)


def noise_expert_probs(rho: float, Y: np.ndarray) -> np.ndarray:
    """Mass ``rho`` spread over the true labels, ``1 - rho`` over the rest.

    With no true label every action is wrong; with every action true every
    action is right.
    """
    Y = np.atleast_2d(Y).astype(bool)
    n_pos = Y.sum(axis=1, keepdims=True)
    n_neg = Y.shape[1] - n_pos
    on = np.where(n_neg == 0, 1.0, rho) / np.maximum(n_pos, 1)
    off = np.where(n_pos == 0, 1.0, 1.0 - rho) / np.maximum(n_neg, 1)
    return np.where(Y, on, off)


def noise_expert_decide(rho: float, x, y, rng: np.random.Generator, n_actions: int | None = None) -> int:
    """Single uniform-noise decision for a context with true label set ``y``.

    ``x`` is unused (the noise is uniform over instances) but kept for a
    uniform expert-call signature. ``n_actions`` defaults to ``max(y) + 1``.
    """
    y = sorted(set(int(a) for a in y))
    if n_actions is None:
        if not y:
            raise ValueError("n_actions is required when the label set is empty")
        n_actions = y[-1] + 1
    wrong = [a for a in range(n_actions) if a not in y]
    if y and (not wrong or rng.random() < rho):
        return int(y[rng.integers(len(y))])
    return int(wrong[rng.integers(len(wrong))])


def fit_proxy_hbm(
    subset: MultiLabelDataset,
    seed: int = 0,
    hidden: int = 32,
    n_hidden: int = 1,
    epochs: int = 200,
    batch_size: int = 64,
    lr: float = 0.01,
    cost: float | CostFn = 0.3,
) -> Expert:
    """Fit a one-vs-rest scorer on fully labelled data and wrap it as an expert.

    The expert's decision distribution is the scorer's per-label probabilities
    normalised to sum to one.
    """
    if subset.n < 10:
        raise ValueError(f"proxy expert needs at least 10 instances, got {subset.n}")
    rng = np.random.default_rng(seed)
    net = init_net(subset.d, subset.n_labels, hidden, n_hidden, "relu", "sigmoid", rng)
    state = AdamState.for_net(net, lr=lr)
    X, Y = subset.X, subset.Y.astype(float)
    for _ in range(epochs):
        order = rng.permutation(subset.n)
        for start in range(0, subset.n, batch_size):
            idx = order[start:start + batch_size]
            tr = trace(net, X[idx])
            # binary cross-entropy, mean over batch; dL/dlogit = p - y
            g = backward_from_logits(net, (tr.output - Y[idx]) / len(idx), tr)
            adam_step(net, state, g)
    return Expert("proxy", scorer=net, cost=cost, name=f"proxy-{seed}")


def make_proxy_pool(
    train: MultiLabelDataset,
    n_experts: int = 3,
    fraction: float = 0.30,
    seed: int = 0,
    cost: float | Sequence[float] = 0.3,
    **fit_kw,
) -> "ExpertPool":
    """K proxy experts, each fitted on its own random ``fraction`` of ``train``."""
    costs = _per_expert(cost, n_experts)
    rng = np.random.default_rng(seed)
    m = max(int(round(fraction * train.n)), 1)
    experts = []
    for j in range(n_experts):
        idx = np.sort(rng.choice(train.n, size=m, replace=False))
        experts.append(fit_proxy_hbm(train.subset(idx), seed=int(rng.integers(2**31)), cost=costs[j], **fit_kw))
    return ExpertPool(tuple(experts))


def make_noise_pool(rhos: Sequence[float], cost: float | Sequence[float] = 0.3) -> "ExpertPool":
    costs = _per_expert(cost, len(rhos))
    return ExpertPool(tuple(Expert("noise", rho=float(r), cost=c, name=f"noise-{r:g}") for r, c in zip(rhos, costs)))


def make_rule_pool(rule=compliance_rule, rho: float = 1.0, cost: float = 0.3) -> "ExpertPool":
    return ExpertPool((Expert("rule", rho=rho, rule=rule, cost=cost, name="rule"),))


def _per_expert(cost, k: int) -> list:
    if np.ndim(cost) == 0 or callable(cost):
        return [cost] * k
    if len(cost) != k:
        raise ValueError(f"expected {k} costs, got {len(cost)}")
    return list(cost)


@dataclass(frozen=True)
class ExpertPool:
    """Experts plus the historical assignment distribution ``d0(h|x)``.

    ``assignment`` is ``None`` for uniform random assignment or a callable
    mapping a context batch to an (n, K) probability matrix.
    """

    experts: tuple[Expert, ...]
    assignment: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if len(self.experts) < 1:
            raise ValueError("pool needs at least one expert")

    @property
    def K(self) -> int:
        return len(self.experts)

    def assignment_probs(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.assignment is None:
            return np.full((X.shape[0], self.K), 1.0 / self.K)
        P = np.asarray(self.assignment(X), dtype=float)
        if P.shape != (X.shape[0], self.K) or not np.allclose(P.sum(axis=1), 1.0):
            raise ValueError("assignment rows must be distributions over the K experts")
        return P

    def costs(self, X: np.ndarray) -> np.ndarray:
        """(n, K) matrix of per-expert costs."""
        return np.stack([e.cost_at(X) for e in self.experts], axis=1)

    def with_costs(self, cost: float | Sequence[float]) -> "ExpertPool":
        costs = _per_expert(cost, self.K)
        experts = tuple(
            Expert(e.kind, e.rho, e.scorer, e.rule, c, e.name) for e, c in zip(self.experts, costs)
        )
        return ExpertPool(experts, self.assignment)


@dataclass(frozen=True)
class RewardOracle:
    """Full counterfactual rewards: action ``a`` on instance ``i`` earns ``1[a in y_i]``."""

    dataset: MultiLabelDataset
    Y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "Y", self.dataset.Y)

    def __call__(self, idx, actions) -> np.ndarray:
        idx = np.asarray(idx)
        if np.any(idx < 0) or np.any(idx >= self.dataset.n):
            raise IndexError("instance outside the oracle's dataset")
        return self.Y[idx, np.asarray(actions)].astype(float)


@dataclass(frozen=True, eq=False)
class BanditLog:
    """Logged tuples ``(x_i, h_i, a_i, r_i)`` with the behaviour propensities.

    ``propensity`` is ``pi0(a_i | x_i, h_i)`` of the logging expert and
    ``marginal_propensity`` is ``sum_h d0(h | x_i) pi0(a_i | x_i, h)``; either
    may be NaN when unknown.
    """

    instance_ids: np.ndarray
    X: np.ndarray
    experts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    propensity: np.ndarray
    marginal_propensity: np.ndarray
    n_actions: int
    n_experts: int

    def __post_init__(self):
        n = len(self.actions)
        for name in ("instance_ids", "experts", "rewards", "propensity", "marginal_propensity"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.X.shape[0] != n:
            raise ValueError("X rows do not match the number of records")
        if np.any((self.rewards < 0) | (self.rewards > 1)):
            raise ValueError("rewards must lie in [0, 1]")
        if np.any((self.actions < 0) | (self.actions >= self.n_actions)):
            raise ValueError("action index out of range")
        if np.any((self.experts < 0) | (self.experts >= self.n_experts)):
            raise ValueError("expert id out of range")

    @property
    def n(self) -> int:
        return len(self.actions)

    def take(self, idx) -> "BanditLog":
        idx = np.asarray(idx, dtype=int)
        return BanditLog(
            self.instance_ids[idx], self.X[idx], self.experts[idx], self.actions[idx], self.rewards[idx],
            self.propensity[idx], self.marginal_propensity[idx], self.n_actions, self.n_experts,
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["instance_id", "expert_id", "action", "reward", "propensity"])
            for i, h, a, r, p in zip(self.instance_ids, self.experts, self.actions, self.rewards, self.propensity):
                w.writerow([int(i), int(h), int(a), repr(float(r)), "" if np.isnan(p) else repr(float(p))])

    @classmethod
    def from_csv(cls, path, dataset: MultiLabelDataset, n_experts: int | None = None) -> "BanditLog":
        """Rebuild a log; contexts are looked up in ``dataset`` by instance id."""
        ids, hs, acts, rs, ps = [], [], [], [], []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                ids.append(int(row["instance_id"]))
                hs.append(int(row["expert_id"]))
                acts.append(int(row["action"]))
                rs.append(float(row["reward"]))
                ps.append(float(row["propensity"]) if row["propensity"] else np.nan)
        ids_a = np.array(ids, dtype=int)
        hs_a = np.array(hs, dtype=int)
        return cls(
            ids_a, dataset.X[ids_a], hs_a, np.array(acts, dtype=int), np.array(rs), np.array(ps),
            np.full(len(ids), np.nan), dataset.n_labels, n_experts or int(hs_a.max()) + 1,
        )


def _sample_rows(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``P``."""
    cdf = np.cumsum(P, axis=1)
    u = rng.random(P.shape[0]) * cdf[:, -1]
    return np.minimum((cdf <= u[:, None]).sum(axis=1), P.shape[1] - 1)


def generate_log(
    dataset: MultiLabelDataset, pool: ExpertPool, seed: int = 0, skip_empty: bool = True
) -> BanditLog:
    """Route every instance to an expert drawn from ``d0`` and record its decision.

    Instances with no true label are skipped by default (every action earns 0).
    """
    rng = np.random.default_rng(seed)
    keep = np.flatnonzero(~dataset.empty_mask) if skip_empty else np.arange(dataset.n)
    X = dataset.X[keep]
    Y = dataset.Y[keep]
    D0 = pool.assignment_probs(X)
    h = _sample_rows(D0, rng)
    probs = np.stack([e.action_probs(X, Y) for e in pool.experts], axis=1)  # (n, K, l)
    rows = np.arange(len(keep))
    P_h = probs[rows, h]
    a = _sample_rows(P_h, rng)
    r = Y[rows, a].astype(float)
    prop = P_h[rows, a]
    marginal = np.einsum("nk,nk->n", D0, probs[rows, :, a])
    return BanditLog(keep, X, h, a, r, prop, marginal, dataset.n_labels, pool.K)


def expert_decisions(
    pool: ExpertPool, experts: np.ndarray, X: np.ndarray, Y: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised deployment-time decisions: expert ``experts[i]`` handles row ``i``."""
    experts = np.asarray(experts, dtype=int)
    if np.any((experts < 0) | (experts >= pool.K)):
        raise ValueError("expert id out of range")
    n, l = Y.shape
    P = np.zeros((n, l))
    cost = np.zeros(n)
    for j, e in enumerate(pool.experts):
        m = experts == j
        if m.any():
            P[m] = e.action_probs(X[m], Y[m])
            cost[m] = e.cost_at(X[m])
    a = _sample_rows(P, rng) if n else np.zeros(0, dtype=int)
    r = Y[np.arange(n), a].astype(float)
    return a, r, cost


def expert_decide_at_test(
    pool: ExpertPool, j: int, x, oracle: RewardOracle, idx: int, rng: np.random.Generator
) -> tuple[int, float, float]:
    """One decision by expert ``j`` on oracle instance ``idx`` (context ``x``).

    Returns ``(action, reward, cost)``.
    """
    if not 0 <= j < pool.K:
        raise ValueError(f"expert {j} not in pool of {pool.K}")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = oracle.Y[[idx]]
    a, r, c = expert_decisions(pool, np.array([j]), X, Y, rng)
    return int(a[0]), float(r[0]), float(c[0])
