"""Command line entry point: ``losstomo <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import analysis
from .errors import LossTomoError
from .estimators import EstimatorSpec, estimate_tree
from .harness import ExperimentConfig, run_experiment
from .simulator import SeedSpec, load_observation, save_observation, simulate
from .statistics import build_stats
from .topology import derive_params, read_topology


def _write(text: str, path: str | None):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load(args):
    topo, alpha = read_topology(args.topology)
    return topo, alpha


def cmd_simulate(args):
    topo, alpha = _load(args)
    if alpha is None:
        raise LossTomoError("the topology file has no link pass rates to simulate with")
    params = derive_params(topo, alpha, strict=False)
    obs = simulate(topo, params, args.n, SeedSpec(args.seed, args.rep))
    if args.binary:
        if args.out in (None, "-"):
            sys.stdout.buffer.write(obs.to_bytes())
        else:
            save_observation(obs, args.out, binary=True)
    else:
        _write(obs.to_text(), args.out)


def cmd_stats(args):
    topo, _ = _load(args)
    stats = build_stats(load_observation(args.obs), topo)
    _write(stats.to_json(args.max_children) + "\n", args.out)


def _policy(args, topo):
    if args.select is not None:
        def choose(stats, topo, k):
            return analysis.select_model(stats, topo, k, args.select, args.method if args.method in ("ibe", "rse") else "ibe")
        return choose
    if args.method == "bwe":
        return EstimatorSpec("bwe", degree=args.degree)
    if args.subset:
        if args.node is None:
            raise LossTomoError("--subset needs --node")
        subset = tuple(int(v) for v in args.subset.split(","))
        return {args.node: EstimatorSpec(args.method, subset=subset)}
    return EstimatorSpec(args.method)


def cmd_estimate(args):
    topo, _ = _load(args)
    obs = load_observation(args.obs)
    report = estimate_tree(build_stats(obs, topo), topo, _policy(args, topo))
    _write(report.to_csv() if args.format == "csv" else report.to_json() + "\n", args.out)


def cmd_analyze(args):
    topo, alpha = _load(args)
    stats = None
    if args.obs:
        stats = build_stats(load_observation(args.obs), topo)
    if args.plug_in:
        if stats is None:
            raise LossTomoError("--plug-in needs --obs")
        rates = analysis.PassRates.from_estimates(estimate_tree(stats, topo), stats)
    else:
        if alpha is None:
            raise LossTomoError("the topology file has no link pass rates; use --obs --plug-in")
        rates = analysis.PassRates.from_params(derive_params(topo, alpha))
    specs = [EstimatorSpec.parse(s) for s in args.spec] if args.spec else None
    rows = analysis.analysis_rows(rates, topo, specs, stats, args.budget)
    _write(analysis.rows_to_csv(rows) if args.format == "csv" else analysis.rows_to_json(rows) + "\n", args.out)


def cmd_select(args):
    topo, _ = _load(args)
    stats = build_stats(load_observation(args.obs), topo)
    choice = {str(k): analysis.select_model(stats, topo, k, args.budget, args.method).tag
              for k in topo.internal_nodes()}
    _write(json.dumps(choice, indent=1) + "\n", args.out)


def cmd_experiment(args):
    cfg = ExperimentConfig.from_file(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.master_seed = args.seed
    report = run_experiment(cfg)
    out_dir = args.out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write(report.summary_csv(), os.path.join(out_dir, f"{cfg.name}_summary.csv"))
        _write(report.records_csv(), os.path.join(out_dir, f"{cfg.name}_replications.csv"))
        _write(report.to_json() + "\n", os.path.join(out_dir, f"{cfg.name}.json"))
    print(report.table())


def cmd_example(args):
    v = analysis.worked_example(args.alpha)
    names = ("direct", "omle", "ibe_pair", "ibe_triple")
    if args.format == "json":
        print(json.dumps(dict(zip(names, v)), indent=1))
        return
    for name, value in zip(names, v):
        print(f"{name:<11} {value:.12g}  (~{value:.2f})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="losstomo", description="Multicast loss tomography toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate probes and write an observation file")
    s.add_argument("--topology", required=True)
    s.add_argument("-n", "--n", type=int, required=True, help="number of probes")
    s.add_argument("--seed", type=int, default=0, help="master seed")
    s.add_argument("--rep", type=int, default=0, help="replication index")
    s.add_argument("--binary", action="store_true", help="write the packed TOMO format")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("stats", help="dump gamma_hat and subset counts")
    s.add_argument("--topology", required=True)
    s.add_argument("--obs", required=True)
    s.add_argument("--max-children", type=int, default=6)
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("estimate", help="estimate link loss rates")
    s.add_argument("--topology", required=True)
    s.add_argument("--obs", required=True)
    s.add_argument("--method", default="omle", choices=["omle", "rse", "bwe", "ibe"])
    s.add_argument("--degree", type=int, default=2, help="bwe degree")
    s.add_argument("--node", type=int, help="node the --subset applies to")
    s.add_argument("--subset", help="comma separated children for rse/ibe")
    s.add_argument("--select", type=int, metavar="BUDGET", help="pick subsets per node by model selection")
    s.add_argument("--format", choices=["json", "csv"], default="json")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("analyze", help="Fisher information and variance bounds per node")
    s.add_argument("--topology", required=True)
    s.add_argument("--obs")
    s.add_argument("--plug-in", action="store_true", help="use estimates from --obs instead of true rates")
    s.add_argument("--spec", action="append", help="estimator spec, e.g. omle, ibe:2,3, bwe:2")
    s.add_argument("--budget", type=int, default=2)
    s.add_argument("--format", choices=["json", "csv"], default="json")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("select", help="choose an estimator per internal node")
    s.add_argument("--topology", required=True)
    s.add_argument("--obs", required=True)
    s.add_argument("--budget", type=int, default=2)
    s.add_argument("--method", choices=["ibe", "rse"], default="ibe")
    s.add_argument("-o", "--out")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("experiment", help="run a seeded replication study from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int, help="override master_seed")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("example", help="variances of four estimators on the three-receiver node")
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--format", choices=["text", "json"], default="text")
    s.set_defaults(func=cmd_example)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (LossTomoError, OSError, ValueError) as exc:
        print(f"losstomo {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
