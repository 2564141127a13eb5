"""Deterministic deployment on a fully labelled test set."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datakit import MultiLabelDataset
from .nnkit import DenseNet, forward
from .simkit import ExpertPool, RewardOracle, expert_decisions
from .trainkit import TrainedSystem


@dataclass
class DeploymentResult:
    """Test-set totals. ``routed`` has K expert counts followed by the algorithm count."""

    system: str
    total: float
    raw: float
    cost_paid: float
    routed: np.ndarray
    algo_reward: float
    human_reward: float
    seed: int
    n_test: int
    extra: dict = field(default_factory=dict)

    @property
    def n_human(self) -> int:
        return int(self.routed[:-1].sum())

    @property
    def human_fraction(self) -> float:
        return self.n_human / self.n_test


def greedy_actions(policy: DenseNet, X: np.ndarray) -> np.ndarray:
    """Argmax action; ``np.argmax`` already resolves ties to the lowest index."""
    return np.argmax(forward(policy, np.atleast_2d(X)), axis=1)


def route(system: TrainedSystem, X: np.ndarray, n_experts: int, rng: np.random.Generator) -> np.ndarray:
    """Expert index per row, or ``n_experts`` for the algorithm.

    Binary routers send a row to a human only when ``p > 0.5`` and the human
    is then drawn uniformly. The personalised router takes the argmax over
    experts and algorithm, with the algorithm winning any tie.
    """
    n = X.shape[0]
    alg = np.full(n, n_experts)
    if system.kind == "AO" or (system.router is None and system.kind != "Human"):
        return alg
    if system.kind == "Human":
        return rng.integers(0, n_experts, size=n)
    q = forward(system.router, X)
    if system.kind == "JCP":
        best = q.max(axis=1)
        to_alg = q[:, -1] >= best
        pick = np.argmax(q[:, :-1], axis=1)
        return np.where(to_alg, n_experts, pick)
    human = q[:, 0] > 0.5
    draw = rng.integers(0, n_experts, size=n)
    return np.where(human, draw, alg)


def evaluate(
    system: TrainedSystem, test: MultiLabelDataset, pool: ExpertPool, seed: int = 0, oracle: RewardOracle | None = None
) -> DeploymentResult:
    """Run ``system`` once over ``test``; human decisions are sampled with ``seed``."""
    oracle = oracle or RewardOracle(test)
    if oracle.dataset.n != test.n:
        raise ValueError("oracle does not cover the test set")
    rng = np.random.default_rng(seed)
    X, Y = test.X, oracle.Y
    K = pool.K
    dest = route(system, X, K, rng)
    to_alg = dest == K
    reward = np.zeros(test.n)
    cost = np.zeros(test.n)
    if to_alg.any():
        a = greedy_actions(system.policy, X[to_alg])
        reward[to_alg] = oracle(np.flatnonzero(to_alg), a)
    hum = ~to_alg
    if hum.any():
        _, r, c = expert_decisions(pool, dest[hum], X[hum], Y[hum], rng)
        reward[hum] = r
        cost[hum] = c
    routed = np.bincount(dest, minlength=K + 1)
    raw = float(reward.sum())
    paid = float(cost.sum())
    return DeploymentResult(
        system.kind, raw - paid, raw, paid, routed,
        float(reward[to_alg].sum()), float(reward[hum].sum()), seed, test.n,
    )


def exact_policy_value(policy: DenseNet, dataset: MultiLabelDataset, deterministic: bool = False) -> float:
    """Mean over instances of ``sum_a pi(a|x) 1[a in y]``; greedy action if ``deterministic``."""
    Y = dataset.Y.astype(float)
    if deterministic:
        a = greedy_actions(policy, dataset.X)
        return float(Y[np.arange(dataset.n), a].mean())
    return float((forward(policy, dataset.X) * Y).sum(axis=1).mean())


@dataclass(frozen=True)
class Summary:
    mean: float
    stderr: float
    n: int

    def __str__(self) -> str:
        return f"{self.mean:.1f}±{self.stderr:.1f}"


def summarize(values: Sequence[float]) -> Summary:
    """Mean and standard error (sample std / sqrt(R)) over repetitions."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("standard error needs at least two repetitions")
    return Summary(float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)), int(v.size))
