"""Counterfactual training objectives and their gradients.

All objectives are maximised. Each returns an :class:`ObjectiveValue` holding
the scalar, the gradient with respect to each trainable network, and the
per-record terms. Importance weights are truncated at ``cfg.truncation``; a
record whose raw ratio reaches the cap contributes a constant and therefore no
gradient through that ratio.

These estimators assume ignorability: given the context, the logged action is
independent of the potential rewards (no unobserved confounders). This is not
checked.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .nnkit import DenseNet, Gradient, backward, trace
from .propensity import PropensityEstimates
from .simkit import BanditLog, ExpertPool

LAMBDA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8)
ALGO_WEIGHTINGS = ("as_written", "per_expert")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Shared knobs for every objective.

    ``restore_baseline`` adds back ``baseline`` times the expected algorithm
    weight in the routing objectives, so the baseline shapes the policy
    gradient without handicapping the algorithm branch in the router's
    comparison. ``algo_weighting`` selects the denominator of the algorithm
    branch in the personalised objective: ``"as_written"`` divides by
    ``d0_hat(h_i|x_i) * pi0_hat(a_i|x_i,h_i)``, ``"per_expert"`` by
    ``pi0_hat(a_i|x_i,h_i)`` alone. ``use_behavior_in_algo=False`` drops the
    behaviour factor from that denominator (sensitivity analysis only).
    """

    truncation: float = 10.0
    baseline: float = 0.0
    restore_baseline: bool = True
    algo_weighting: str = "per_expert"
    use_behavior_in_algo: bool = True

    def __post_init__(self):
        if self.truncation < 1:
            raise ValueError("truncation cap must be >= 1")
        if not 0.0 <= self.baseline <= 1.0:
            raise ValueError("baseline must be in [0, 1]")
        if self.algo_weighting not in ALGO_WEIGHTINGS:
            raise ValueError(f"algo_weighting must be one of {ALGO_WEIGHTINGS}")


@dataclass(frozen=True, eq=False)
class LoggedBatch:
    """Array view of a log with every denominator resolved.

    ``propensity`` is ``pi0(a_i | x_i)``, ``propensity_by_expert`` is
    ``pi0(a_i | x_i, h_i)``, ``assignment`` is ``d0(h_i | x_i)`` and ``costs``
    holds ``C_j(x_i)`` for every expert ``j`` (shape (n, K)).
    """

    X: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    experts: np.ndarray
    costs: np.ndarray
    propensity: np.ndarray
    propensity_by_expert: np.ndarray
    assignment: np.ndarray
    n_actions: int
    n_experts: int

    def __post_init__(self):
        for name in ("propensity", "propensity_by_expert", "assignment"):
            p = getattr(self, name)
            if np.any(~np.isfinite(p)) or np.any(p <= 0):
                raise FloatingPointError(f"{name} must be finite and strictly positive")
        if np.any((self.experts < 0) | (self.experts >= self.n_experts)):
            raise ValueError("record with unknown expert id")

    @property
    def n(self) -> int:
        return len(self.actions)

    @property
    def logged_cost(self) -> np.ndarray:
        """Cost of the expert who produced each record."""
        return self.costs[np.arange(self.n), self.experts]

    def take(self, idx) -> "LoggedBatch":
        # rows of an already validated batch; skip re-validation
        sub = object.__new__(LoggedBatch)
        for name in ("X", "actions", "rewards", "experts", "costs", "propensity", "propensity_by_expert", "assignment"):
            object.__setattr__(sub, name, getattr(self, name)[idx])
        object.__setattr__(sub, "n_actions", self.n_actions)
        object.__setattr__(sub, "n_experts", self.n_experts)
        return sub


def make_batch(
    log: BanditLog,
    pool: ExpertPool,
    estimates: PropensityEstimates | None = None,
    source: str = "estimated",
) -> LoggedBatch:
    """Resolve denominators either from fitted estimates or from the logged true propensities."""
    X = log.X
    costs = pool.costs(X)
    if source == "logged-true":
        if np.any(np.isnan(log.propensity)) or np.any(np.isnan(log.marginal_propensity)):
            raise ValueError("log does not carry true propensities")
        prop, prop_h = log.marginal_propensity, log.propensity
        d0 = pool.assignment_probs(X)[np.arange(log.n), log.experts]
    elif source == "estimated":
        if estimates is None:
            raise ValueError("estimated propensities requested but none given")
        prop = estimates.behavior(X, log.actions)
        by_expert = estimates.behavior_by_expert
        prop_h = by_expert(X, log.actions, log.experts) if by_expert is not None else prop
        d0 = estimates.assignment(X, log.experts)
    else:
        raise ValueError(f"unknown propensity source {source!r}")
    return LoggedBatch(
        X, log.actions, log.rewards, log.experts, costs, np.asarray(prop, float), np.asarray(prop_h, float),
        np.asarray(d0, float), log.n_actions, log.n_experts,
    )


@dataclass
class PerSampleTerms:
    weights: np.ndarray  # truncated importance weight of the algorithm branch
    route_human: np.ndarray  # probability mass sent to a human
    contributions: np.ndarray


@dataclass
class ObjectiveValue:
    value: float
    policy_grad: Gradient | None
    router_grad: Gradient | None
    terms: PerSampleTerms


def _check_policy(policy: DenseNet, batch: LoggedBatch):
    if policy.head != "softmax" or policy.out_dim != batch.n_actions:
        raise ValueError(f"policy must be a softmax over {batch.n_actions} actions")


def ips_objective(policy: DenseNet, batch: LoggedBatch, cfg: ObjectiveConfig, grad: bool = True) -> ObjectiveValue:
    """Truncated IPS with baseline: ``mean((r - lam) * min(pi/pi0, M))``."""
    _check_policy(policy, batch)
    n = batch.n
    rows = np.arange(n)
    tp = trace(policy, batch.X)
    pi_a = tp.output[rows, batch.actions]
    ratio = pi_a / batch.propensity
    live = ratio < cfg.truncation
    w = np.where(live, ratio, cfg.truncation)
    shifted = batch.rewards - cfg.baseline
    contrib = shifted * w
    g = None
    if grad:
        U = np.zeros_like(tp.output)
        U[rows, batch.actions] = np.where(live, shifted / batch.propensity, 0.0) / n
        g = backward(policy, U, tp)
    return ObjectiveValue(float(contrib.mean()), g, None, PerSampleTerms(w, np.zeros(n), contrib))


def collab_objective(
    policy: DenseNet,
    router: DenseNet | None,
    batch: LoggedBatch,
    cfg: ObjectiveConfig,
    trainable: str = "joint",
    grad: bool = True,
) -> ObjectiveValue:
    """Human-vs-algorithm routing objective.

    Per record: ``p (r - C) + (1 - p) * w * (r - lam)`` where ``p`` is the
    router's human probability and ``w`` the truncated ratio; with
    ``restore_baseline`` the algorithm branch also gets ``(1 - p) * lam``.
    The human branch needs no weight because the logging humans are the ones
    queried at deployment. ``trainable="router"`` freezes the policy;
    ``router=None`` pins every record to the algorithm branch.
    """
    if trainable not in ("router", "joint"):
        raise ValueError("trainable must be 'router' or 'joint'")
    _check_policy(policy, batch)
    if router is not None and (router.head != "sigmoid" or router.out_dim != 1):
        raise ValueError("router must have a single sigmoid output")
    n = batch.n
    rows = np.arange(n)
    tp = trace(policy, batch.X)
    tr = trace(router, batch.X) if router is not None else None
    p = tr.output[:, 0] if tr is not None else np.zeros(n)
    pi_a = tp.output[rows, batch.actions]
    ratio = pi_a / batch.propensity
    live = ratio < cfg.truncation
    w = np.where(live, ratio, cfg.truncation)
    shifted = batch.rewards - cfg.baseline
    algo = w * shifted + (cfg.baseline if cfg.restore_baseline else 0.0)
    human = batch.rewards - batch.logged_cost
    contrib = p * human + (1.0 - p) * algo
    pg = rg = None
    if grad:
        if tr is not None:
            rg = backward(router, ((human - algo) / n)[:, None], tr)
        if trainable == "joint":
            U = np.zeros_like(tp.output)
            U[rows, batch.actions] = np.where(live, (1.0 - p) * shifted / batch.propensity, 0.0) / n
            pg = backward(policy, U, tp)
    return ObjectiveValue(float(contrib.mean()), pg, rg, PerSampleTerms(w, p, contrib))


def personalized_objective(
    policy: DenseNet,
    router: DenseNet | None,
    batch: LoggedBatch,
    cfg: ObjectiveConfig,
    grad: bool = True,
) -> ObjectiveValue:
    """Routing over K experts plus the algorithm (last router output).

    Per record with logging expert ``h``::

        (r - C_h) * q_h / d0_h  +  (r - lam) * min(q_alg * pi(a) / (d0_h^s * pi0(a|x,h)), M)

    where ``s`` is 1 for ``algo_weighting="as_written"`` and 0 for
    ``"per_expert"``. The cap applies to the whole algorithm-branch weight.
    ``router=None`` sends every record to the algorithm.
    """
    _check_policy(policy, batch)
    K = batch.n_experts
    if router is not None and (router.head != "softmax" or router.out_dim != K + 1):
        raise ValueError(f"router must be a softmax over {K} experts plus the algorithm")
    n = batch.n
    rows = np.arange(n)
    tp = trace(policy, batch.X)
    tr = trace(router, batch.X) if router is not None else None
    if tr is not None:
        q = tr.output
    else:
        q = np.zeros((n, K + 1))
        q[:, K] = 1.0
    q_h = q[rows, batch.experts]
    q_alg = q[:, K]
    pi_a = tp.output[rows, batch.actions]
    human_w = q_h / batch.assignment
    human = (batch.rewards - batch.logged_cost) * human_w
    denom = np.ones(n)
    if cfg.algo_weighting == "as_written":
        denom = denom * batch.assignment
    if cfg.use_behavior_in_algo:
        denom = denom * batch.propensity_by_expert
    z = q_alg * pi_a / denom
    live = z < cfg.truncation
    w = np.where(live, z, cfg.truncation)
    shifted = batch.rewards - cfg.baseline
    restore_coef = np.zeros(n)
    if cfg.restore_baseline:
        restore_coef = cfg.baseline / (batch.assignment if cfg.algo_weighting == "as_written" else 1.0)
    restore = restore_coef * q_alg
    contrib = human + shifted * w + restore
    pg = rg = None
    if grad:
        Uq = np.zeros_like(q)
        Uq[rows, batch.experts] = (batch.rewards - batch.logged_cost) / batch.assignment
        dz = np.where(live, shifted, 0.0)
        Uq[:, K] += dz * pi_a / denom + restore_coef
        if tr is not None:
            rg = backward(router, Uq / n, tr)
        Up = np.zeros_like(tp.output)
        Up[rows, batch.actions] = dz * q_alg / denom / n
        pg = backward(policy, Up, tp)
    return ObjectiveValue(float(contrib.mean()), pg, rg, PerSampleTerms(w, 1.0 - q_alg, contrib))


def lambda_grid(
    train: Callable[[float], DenseNet],
    batch: LoggedBatch,
    grid: Sequence[float] = LAMBDA_GRID,
    cfg: ObjectiveConfig | None = None,
    tol: float = 1e-9,
) -> tuple[float, dict[float, float], dict[float, DenseNet]]:
    """Pick the baseline whose trained policy has the best un-baselined truncated-IPS value.

    ``train(lam)`` returns a policy trained with baseline ``lam``. Estimates
    within ``tol`` of the best count as ties and resolve to the smaller
    baseline. Returns ``(best, estimates, policies)``.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("empty baseline grid")
    cfg = replace(cfg or ObjectiveConfig(), baseline=0.0)
    policies = {lam: train(lam) for lam in grid}
    if len(grid) == 1:
        return grid[0], {grid[0]: ips_objective(policies[grid[0]], batch, cfg, grad=False).value}, policies
    estimates = {lam: ips_objective(policies[lam], batch, cfg, grad=False).value for lam in grid}
    top = max(estimates.values())
    best = min(lam for lam in grid if estimates[lam] >= top - tol)
    return best, estimates, policies
