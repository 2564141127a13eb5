"""Command line entry point: ``haiteam run | gen-data | eval | grid-lambda``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..datakit import make_compliance_2d, make_synthetic_multilabel, save_libsvm_multilabel
from ..evalkit import evaluate
from ..objectives import ips_objective
from ..simkit import generate_log, make_noise_pool
from ..trainkit import TrainedSystem, train_ao
from .config import ConfigError, derive_seed, load_config
from .runner import prepare, result_row, run_experiment
from .tables import rows_to_csv


def _config(args):
    return load_config(args.config, args.set or [])


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.workers:
        cfg.workers = args.workers
    out = run_experiment(cfg)
    sys.stdout.write(out["files"]["summary_txt"].read_text())
    print(f"results written to {cfg.output_dir}")
    return 0


def cmd_gen_data(args) -> int:
    if args.kind == "compliance-2d":
        ds = make_compliance_2d(args.n, seed=args.seed)
    else:
        ds = make_synthetic_multilabel(args.n, args.d, args.l, args.label_noise, seed=args.seed, separation=args.separation)
    save_libsvm_multilabel(ds, args.out, seed=args.seed)
    print(f"wrote {ds.n} instances (d={ds.d}, l={ds.n_labels}) to {args.out}")
    if args.log_out:
        pool = make_noise_pool(args.rho, args.cost)
        log = generate_log(ds, pool, derive_seed(args.seed, "log"))
        log.to_csv(args.log_out)
        print(f"wrote {log.n} logged decisions to {args.log_out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    system = TrainedSystem.load(args.system)
    variants = dict(cfg.variants())
    label = args.variant or next(iter(variants))
    if label not in variants:
        raise ConfigError("variant", f"no variant {label!r}; have {list(variants)}")
    vcfg = variants[label]
    rp = prepare(vcfg, args.repetition)
    res = evaluate(system, rp.test, rp.pool, derive_seed(rp.seed, "eval"))
    sys.stdout.write(rows_to_csv([result_row(vcfg, label, rp, res)]))
    return 0


def cmd_grid_lambda(args) -> int:
    cfg = _config(args)
    if args.grid:
        cfg.train.lambda_grid = list(args.grid)
    rp = prepare(cfg, args.repetition)
    ao = train_ao(rp.batch, cfg.train.to_train_config(rp.train_cfg.seed))
    print("lambda,estimate")
    for lam, est in ao.meta["lambda_estimates"].items():
        print(f"{float(lam):g},{est:.6f}")
    print(f"selected lambda: {ao.baseline:g}")
    check = ips_objective(ao.policy, rp.batch, cfg.train.to_train_config(0).objective(0.0), grad=False).value
    print(f"truncated IPS estimate of selected policy: {check:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="haiteam", description="Human-AI collaboration from logged bandit feedback.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=True):
        sp.add_argument("config", nargs=None if required else "?", help="YAML experiment config")
        sp.add_argument("-s", "--set", action="append", metavar="KEY.PATH=VALUE", help="override a config key")

    r = sub.add_parser("run", help="run an experiment config")
    with_config(r)
    r.add_argument("--output-dir")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen-data", help="write a synthetic dataset (LIBSVM multilabel) and optionally a bandit log")
    g.add_argument("--kind", choices=["synthetic", "compliance-2d"], default="synthetic")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--d", type=int, default=10)
    g.add_argument("--l", type=int, default=20)
    g.add_argument("--label-noise", type=float, default=0.0)
    g.add_argument("--separation", type=float, default=3.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--log-out", help="also write a bandit log CSV from noise experts")
    g.add_argument("--rho", type=float, nargs="+", default=[0.6, 0.7, 0.8])
    g.add_argument("--cost", type=float, default=0.3)
    g.set_defaults(func=cmd_gen_data)

    e = sub.add_parser("eval", help="evaluate a saved trained system on a config's test split")
    e.add_argument("system", help=".npz written by a run with save_models: true")
    e.add_argument("--config", required=True)
    e.add_argument("-s", "--set", action="append", metavar="KEY.PATH=VALUE")
    e.add_argument("--repetition", type=int, default=0)
    e.add_argument("--variant")
    e.set_defaults(func=cmd_eval)

    lg = sub.add_parser("grid-lambda", help="baseline grid search for the algorithm-only policy")
    with_config(lg)
    lg.add_argument("--repetition", type=int, default=0)
    lg.add_argument("--grid", type=float, nargs="+")
    lg.set_defaults(func=cmd_grid_lambda)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
