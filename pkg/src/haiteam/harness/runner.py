"""End-to-end experiment pipeline.

Per repetition: split, build experts, generate the log, fit propensities,
train the requested systems, evaluate, and emit one row per system. Output
files carry no timestamps, so a config plus master seed reproduces them.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..datakit import (
    MultiLabelDataset,
    SplitSpec,
    make_compliance_2d,
    make_synthetic_multilabel,
    read_libsvm_multilabel,
    split,
    standardize,
)
from ..evalkit import DeploymentResult, evaluate
from ..objectives import LoggedBatch, make_batch
from ..propensity import PropensityEstimates, fit_propensities
from ..simkit import BanditLog, ExpertPool, generate_log, make_noise_pool, make_proxy_pool, make_rule_pool
from ..trainkit import (
    SYSTEMS,
    TrainConfig,
    TrainedSystem,
    best_of,
    human_system,
    train_ao,
    train_jc,
    train_jcp,
    train_ts,
)
from .config import ExperimentConfig, derive_seed, dump_config
from .tables import emit_tables, summarize_rows

logger = logging.getLogger(__name__)


@dataclass
class Repetition:
    index: int
    seed: int
    train: MultiLabelDataset
    test: MultiLabelDataset
    pool: ExpertPool
    log: BanditLog
    estimates: PropensityEstimates | None
    batch: LoggedBatch
    train_cfg: TrainConfig


def load_dataset(cfg: ExperimentConfig) -> MultiLabelDataset:
    ds = cfg.dataset
    seed = cfg.seed if ds.seed is None else ds.seed
    if ds.source == "file":
        path = Path(ds.path)
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
        return read_libsvm_multilabel(path)
    if ds.source == "compliance-2d":
        return make_compliance_2d(ds.n, seed=seed, expert_share=ds.expert_share)
    return make_synthetic_multilabel(ds.n, ds.d, ds.l, ds.label_noise, seed=seed, separation=ds.separation)


def build_pool(cfg: ExperimentConfig, train: MultiLabelDataset, seed: int) -> ExpertPool:
    ex = cfg.experts
    cost = ex.cost if np.ndim(ex.cost) == 0 else [float(c) for c in ex.cost]
    if ex.kind == "noise":
        return make_noise_pool(ex.rho, cost)
    if ex.kind == "rule":
        return make_rule_pool(rho=ex.rho[0] if len(ex.rho) == 1 else 1.0, cost=float(cost))
    return make_proxy_pool(
        train, ex.n_experts, ex.subset_fraction, derive_seed(seed, "experts"), cost,
        hidden=ex.proxy_hidden, epochs=ex.proxy_epochs,
    )


def prepare(cfg: ExperimentConfig, rep: int, dataset: MultiLabelDataset | None = None) -> Repetition:
    seed = cfg.rep_seed(rep)
    dataset = dataset if dataset is not None else load_dataset(cfg)
    train, test = split(dataset, SplitSpec(cfg.dataset.test_fraction, derive_seed(seed, "split")))
    # the rule expert reads raw coordinates, so the compliance data stays unscaled
    if cfg.dataset.standardize and cfg.dataset.source != "compliance-2d":
        train, test = standardize(train, test)
    pool = build_pool(cfg, train, seed)
    log = generate_log(train, pool, derive_seed(seed, "log"))
    pc = cfg.propensity
    estimates = None
    if pc.source == "estimated":
        estimates = fit_propensities(
            log, pool, conditioned=pc.conditioned, assignment=pc.assignment, floor=pc.floor,
            seed=derive_seed(seed, "propensity"),
        )
    batch = make_batch(log, pool, estimates, pc.source)
    train_cfg = cfg.train.to_train_config(derive_seed(seed, "train"))
    return Repetition(rep, seed, train, test, pool, log, estimates, batch, train_cfg)


def train_systems(cfg: ExperimentConfig, rp: Repetition) -> dict[str, TrainedSystem]:
    wanted = [s for s in SYSTEMS if s in cfg.systems]
    tc = cfg.train
    out: dict[str, TrainedSystem] = {}
    ao = None
    joint = bool({"JC", "JCP"} & set(wanted))
    if any(s in wanted for s in ("AO", "TS")) or (joint and (tc.joint_baseline == "ao" or tc.joint_init != "fresh")):
        ao = train_ao(rp.batch, rp.train_cfg)
    joint_lam = ao.baseline if (ao is not None and tc.joint_baseline == "ao") else None
    starts = {"fresh": [None], "ao": [ao.policy if ao else None], "best": [None, ao.policy if ao else None]}[tc.joint_init]

    def joint_fit(trainer):
        runs = [trainer(rp.batch, rp.train_cfg, joint_lam, init_policy=p) for p in starts]
        return runs[0] if len(runs) == 1 else best_of(runs, rp.batch, rp.train_cfg)

    for name in wanted:
        if name == "Human":
            out[name] = human_system(rp.pool.K)
        elif name == "AO":
            out[name] = ao
        elif name == "TS":
            out[name] = train_ts(rp.batch, rp.train_cfg, ao)
        elif name == "JC":
            out[name] = joint_fit(train_jc)
        elif name == "JCP":
            out[name] = joint_fit(train_jcp)
    return out


def result_row(cfg: ExperimentConfig, variant: str, rp: Repetition, res: DeploymentResult) -> dict:
    cost = cfg.experts.cost
    return {
        "variant": variant,
        "system": res.system,
        "dataset": cfg.dataset.source if cfg.dataset.source != "file" else Path(cfg.dataset.path).name,
        "cost": f"{float(cost):g}" if np.ndim(cost) == 0 else "|".join(f"{float(c):g}" for c in cost),
        "repetition": rp.index,
        "seed": rp.seed,
        "n_test": res.n_test,
        "total": float(res.total),
        "raw": float(res.raw),
        "cost_paid": float(res.cost_paid),
        "human_fraction": float(res.human_fraction),
        "routed_algorithm": int(res.routed[-1]),
        "routed_experts": "|".join(str(int(c)) for c in res.routed[:-1]),
    }


def run_repetition(cfg: ExperimentConfig, variant: str, rep: int, model_dir: str | None = None):
    rp = prepare(cfg, rep)
    systems = train_systems(cfg, rp)
    eval_seed = derive_seed(rp.seed, "eval")
    rows = []
    for name, system in systems.items():
        res = evaluate(system, rp.test, rp.pool, eval_seed)
        rows.append(result_row(cfg, variant, rp, res))
        if model_dir is not None and system.kind != "Human":
            path = Path(model_dir) / variant
            path.mkdir(parents=True, exist_ok=True)
            system.save(path / f"rep{rep:02d}_{name}.npz")
    logger.info("variant=%s rep=%d done: %s", variant, rep, ", ".join(f"{r['system']}={r['total']:.1f}" for r in rows))
    return rows, (systems if rep == 0 else None), (rp.test if rep == 0 else None)


def _task(args):
    return run_repetition(*args)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Run every variant and repetition; write tables, the resolved config and figures.

    Returns a dict with ``rows``, ``summary`` and (if written) ``files``.
    """
    out_dir = Path(cfg.output_dir)
    model_dir = str(out_dir / "models") if (write and cfg.save_models) else None
    tasks = []
    for v_idx, (label, vcfg) in enumerate(cfg.variants()):
        for rep in range(cfg.repetitions):
            tasks.append(((v_idx, rep), (vcfg, label, rep, model_dir)))
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_task, [t[1] for t in tasks]))
    else:
        results = [_task(t[1]) for t in tasks]
    # rows are emitted in (variant, repetition) order regardless of completion order
    ordered = sorted(zip((t[0] for t in tasks), results), key=lambda kv: kv[0])
    rows = [row for _, (rs, _, _) in ordered for row in rs]
    summary = summarize_rows(rows)
    out = {"rows": rows, "summary": summary}
    if not write:
        return out
    out_dir.mkdir(parents=True, exist_ok=True)
    results_csv, summary_csv, summary_txt = emit_tables(rows)
    files = {
        "results": out_dir / "results.csv",
        "summary_csv": out_dir / "summary.csv",
        "summary_txt": out_dir / "summary.txt",
        "config": out_dir / "config.resolved.yaml",
    }
    files["results"].write_text(results_csv)
    files["summary_csv"].write_text(summary_csv)
    files["summary_txt"].write_text(summary_txt)
    files["config"].write_text(dump_config(cfg))
    if cfg.figures:
        from . import report

        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        files["fig_summary"] = report.plot_summary(summary, fig_dir / "summary.png", cfg.name)
        if any(s["system"] in ("TS", "JC", "JCP") for s in summary):
            files["fig_routing"] = report.plot_routing(summary, fig_dir / "routing.png")
        if cfg.dataset.source == "compliance-2d":
            first_systems, first_test = ordered[0][1][1], ordered[0][1][2]
            if first_systems is not None:
                files["fig_compliance"] = report.plot_compliance(first_test, first_systems, fig_dir / "compliance.png")
    out["files"] = files
    return out
