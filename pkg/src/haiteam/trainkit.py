"""Minibatch Adam training for the five decision systems.

``Human`` has no model, ``AO`` a policy, ``TS`` and ``JC`` a policy plus a
binary router, ``JCP`` a policy plus a router over K experts and the algorithm
(algorithm is the last router output). All objectives are maximised, so Adam
is fed the negated gradient.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .nnkit import AdamState, DenseNet, adam_step, init_net, net_from_arrays, net_to_arrays
from .objectives import (
    LAMBDA_GRID,
    LoggedBatch,
    ObjectiveConfig,
    collab_objective,
    ips_objective,
    lambda_grid,
    personalized_objective,
)

logger = logging.getLogger(__name__)

SYSTEMS = ("Human", "AO", "TS", "JC", "JCP")
_STREAM_POLICY, _STREAM_ROUTER, _STREAM_SHUFFLE = 1, 2, 3


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    window: int = 20
    tol: float = 1e-4
    truncation: float = 10.0
    hidden: int = 8
    n_hidden: int = 2
    activation: str = "identity"
    router_hidden: int = 8
    router_n_hidden: int = 2
    router_activation: str = "identity"
    restore_baseline: bool = True
    algo_weighting: str = "per_expert"
    use_behavior_in_algo: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def objective(self, baseline: float) -> ObjectiveConfig:
        return ObjectiveConfig(
            truncation=self.truncation,
            baseline=baseline,
            restore_baseline=self.restore_baseline,
            algo_weighting=self.algo_weighting,
            use_behavior_in_algo=self.use_behavior_in_algo,
        )


@dataclass
class TrainedSystem:
    kind: str
    policy: DenseNet | None = None
    router: DenseNet | None = None
    history: list[float] = field(default_factory=list)
    baseline: float = 0.0
    n_experts: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SYSTEMS:
            raise ValueError(f"unknown system {self.kind!r}")
        if self.kind == "Human" and (self.policy is not None or self.router is not None):
            raise ValueError("Human system has no models")
        if self.kind == "AO" and self.router is not None:
            raise ValueError("AO system has no router")
        if self.kind == "JCP" and self.router is not None and self.router.out_dim != self.n_experts + 1:
            raise ValueError("JCP router must have K+1 outputs")

    def save(self, path) -> None:
        arrays = {}
        if self.policy is not None:
            arrays.update(net_to_arrays(self.policy, "policy_"))
        if self.router is not None:
            arrays.update(net_to_arrays(self.router, "router_"))
        header = {
            "kind": self.kind,
            "baseline": self.baseline,
            "n_experts": self.n_experts,
            "history": self.history,
            "meta": self.meta,
        }
        arrays["system"] = np.array(json.dumps(header, default=float))
        np.savez(Path(path), **arrays)

    @classmethod
    def load(cls, path) -> "TrainedSystem":
        with np.load(Path(path)) as f:
            header = json.loads(str(f["system"]))
            policy = net_from_arrays(f, "policy_") if "policy_header" in f else None
            router = net_from_arrays(f, "router_") if "router_header" in f else None
        return cls(header["kind"], policy, router, header["history"], header["baseline"], header["n_experts"], header["meta"])


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def new_policy(batch: LoggedBatch, cfg: TrainConfig) -> DenseNet:
    return init_net(
        batch.X.shape[1], batch.n_actions, cfg.hidden, cfg.n_hidden, cfg.activation, "softmax",
        _rng(cfg.seed, _STREAM_POLICY),
    )


def new_router(batch: LoggedBatch, cfg: TrainConfig, personalized: bool = False) -> DenseNet:
    out, head = (batch.n_experts + 1, "softmax") if personalized else (1, "sigmoid")
    return init_net(
        batch.X.shape[1], out, cfg.router_hidden, cfg.router_n_hidden, cfg.router_activation, head,
        _rng(cfg.seed, _STREAM_ROUTER),
    )


def converged(history: list[float], window: int, tol: float) -> bool:
    """Moving average over the last ``window`` epochs improved by less than ``tol``."""
    if len(history) < 2 * window:
        return False
    now = float(np.mean(history[-window:]))
    before = float(np.mean(history[-2 * window:-window]))
    return now - before < tol


def _optimize(batch: LoggedBatch, cfg: TrainConfig, mode: str, baseline: float, policy, router) -> list[float]:
    """Shared loop. ``mode`` is ips | router | joint | clamped | personal."""
    ocfg = cfg.objective(baseline)
    shuffle = _rng(cfg.seed, _STREAM_SHUFFLE)
    p_state = AdamState.for_net(policy, cfg.lr) if mode != "router" else None
    r_state = AdamState.for_net(router, cfg.lr) if mode in ("router", "joint", "personal") else None
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(batch.n)
        total = 0.0
        for start in range(0, batch.n, cfg.batch_size):
            mb = batch.take(order[start:start + cfg.batch_size])
            if mode == "ips":
                res = ips_objective(policy, mb, ocfg)
            elif mode == "clamped":
                res = collab_objective(policy, None, mb, ocfg)
            elif mode == "router":
                res = collab_objective(policy, router, mb, ocfg, trainable="router")
            elif mode == "joint":
                res = collab_objective(policy, router, mb, ocfg, trainable="joint")
            else:
                res = personalized_objective(policy, router, mb, ocfg)
            if not np.isfinite(res.value):
                raise TrainingDiverged(f"non-finite objective at epoch {epoch} (mode={mode}, baseline={baseline})")
            total += res.value * mb.n
            if p_state is not None:
                adam_step(policy, p_state, res.policy_grad.scaled(-1.0))
            if r_state is not None:
                adam_step(router, r_state, res.router_grad.scaled(-1.0))
        history.append(total / batch.n)
        if converged(history, cfg.window, cfg.tol):
            break
    logger.debug("mode=%s baseline=%.2f stopped after %d epochs at %.4f", mode, baseline, len(history), history[-1])
    return history


def train_policy(batch: LoggedBatch, cfg: TrainConfig, baseline: float) -> tuple[DenseNet, list[float]]:
    policy = new_policy(batch, cfg)
    return policy, _optimize(batch, cfg, "ips", baseline, policy, None)


def train_ao(batch: LoggedBatch, cfg: TrainConfig) -> TrainedSystem:
    """Truncated-IPS policy with the baseline picked from ``cfg.lambda_grid``."""
    histories = {}

    def fit(lam: float) -> DenseNet:
        policy, histories[lam] = train_policy(batch, cfg, lam)
        return policy

    lam, estimates, policies = lambda_grid(fit, batch, cfg.lambda_grid, cfg.objective(0.0))
    return TrainedSystem(
        "AO", policies[lam], None, histories[lam], lam, batch.n_experts,
        {"lambda_estimates": {str(k): v for k, v in estimates.items()}},
    )


def train_ts(batch: LoggedBatch, cfg: TrainConfig, ao: TrainedSystem | None = None) -> TrainedSystem:
    """Two stage: the AO policy is frozen, then the router alone is fitted."""
    ao = ao or train_ao(batch, cfg)
    policy = ao.policy.copy()
    router = new_router(batch, cfg)
    history = _optimize(batch, cfg, "router", ao.baseline, policy, router)
    return TrainedSystem("TS", policy, router, history, ao.baseline, batch.n_experts, {"policy_history": ao.history})


def _baseline_search(batch: LoggedBatch, cfg: TrainConfig, fit, value) -> tuple[float, dict]:
    """Grid over baselines scored by the un-baselined objective of the fitted models; ties go low."""
    results = {lam: fit(lam) for lam in sorted(cfg.lambda_grid)}
    scores = {lam: value(*results[lam][:2]) for lam in results}
    top = max(scores.values())
    best = min(lam for lam in scores if scores[lam] >= top - 1e-9)
    return best, {"results": results, "scores": scores}


def _start_policy(batch: LoggedBatch, cfg: TrainConfig, init_policy: DenseNet | None) -> DenseNet:
    if init_policy is None:
        return new_policy(batch, cfg)
    if init_policy.in_dim != batch.X.shape[1] or init_policy.out_dim != batch.n_actions:
        raise ValueError("init_policy does not match the batch dimensions")
    return init_policy.copy()


def train_jc(
    batch: LoggedBatch,
    cfg: TrainConfig,
    baseline: float | None = None,
    clamp_router: bool = False,
    init_policy: DenseNet | None = None,
) -> TrainedSystem:
    """Joint collaboration: one Adam step on policy and router per minibatch.

    ``baseline=None`` searches ``cfg.lambda_grid``. ``clamp_router`` fixes the
    router to the algorithm branch (no router is trained). ``init_policy``
    starts the policy from a copy of the given network instead of a fresh
    initialisation; both networks are still updated jointly.
    """
    mode = "clamped" if clamp_router else "joint"

    def fit(lam):
        policy = _start_policy(batch, cfg, init_policy)
        router = None if clamp_router else new_router(batch, cfg)
        return policy, router, _optimize(batch, cfg, mode, lam, policy, router)

    if baseline is None:
        if clamp_router:
            value = lambda p, r: ips_objective(p, batch, cfg.objective(0.0), grad=False).value  # noqa: E731
        else:
            value = lambda p, r: collab_objective(p, r, batch, cfg.objective(0.0), grad=False).value  # noqa: E731
        baseline, info = _baseline_search(batch, cfg, fit, value)
        policy, router, history = info["results"][baseline]
        meta = {"lambda_estimates": {str(k): v for k, v in info["scores"].items()}}
    else:
        policy, router, history = fit(baseline)
        meta = {}
    return TrainedSystem("JC", policy, router, history, baseline, batch.n_experts, meta)


def train_jcp(
    batch: LoggedBatch, cfg: TrainConfig, baseline: float | None = None, init_policy: DenseNet | None = None
) -> TrainedSystem:
    """Joint training of the policy and a router over the K experts plus the algorithm."""

    def fit(lam):
        policy = _start_policy(batch, cfg, init_policy)
        router = new_router(batch, cfg, personalized=True)
        return policy, router, _optimize(batch, cfg, "personal", lam, policy, router)

    if baseline is None:
        value = lambda p, r: personalized_objective(p, r, batch, cfg.objective(0.0), grad=False).value  # noqa: E731
        baseline, info = _baseline_search(batch, cfg, fit, value)
        policy, router, history = info["results"][baseline]
        meta = {"lambda_estimates": {str(k): v for k, v in info["scores"].items()}}
    else:
        policy, router, history = fit(baseline)
        meta = {}
    return TrainedSystem("JCP", policy, router, history, baseline, batch.n_experts, meta)


def training_value(system: TrainedSystem, batch: LoggedBatch, cfg: TrainConfig) -> float:
    """Un-baselined training-objective estimate of a trained system."""
    ocfg = cfg.objective(0.0)
    if system.kind == "AO" or system.router is None:
        return ips_objective(system.policy, batch, ocfg, grad=False).value
    if system.kind == "JCP":
        return personalized_objective(system.policy, system.router, batch, ocfg, grad=False).value
    return collab_objective(system.policy, system.router, batch, ocfg, grad=False).value


def best_of(candidates: list[TrainedSystem], batch: LoggedBatch, cfg: TrainConfig, tol: float = 1e-9) -> TrainedSystem:
    """The candidate with the highest training-objective estimate; ties keep the earliest."""
    if not candidates:
        raise ValueError("no candidates")
    scores = [training_value(c, batch, cfg) for c in candidates]
    top = max(scores)
    pick = next(i for i, v in enumerate(scores) if v >= top - tol)
    chosen = candidates[pick]
    chosen.meta = dict(chosen.meta, restart_values=scores, restart_pick=pick)
    return chosen


def human_system(n_experts: int) -> TrainedSystem:
    return TrainedSystem("Human", n_experts=n_experts)


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["lambda_grid"] = list(cfg.lambda_grid)
    return d


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
