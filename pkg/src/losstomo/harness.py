"""Seeded Monte-Carlo experiments comparing estimators on one target link.

A config file is INI-style::

    [experiment]
    name = uniform_loss
    topology = eight_receivers.topo  ; relative to the config file
    sample_sizes = 300, 900, 1500, 2100, 2700
    replications = 20
    master_seed = 2012
    target_node = 1

    [estimators]
    OMLE = omle
    A_k(2) = bwe:2
    Al_k pair = ibe:2,3
    selected = select:2           ; model selection with budget 2, per replication

    [alpha]                       ; optional overrides of the topology file
    2 = 0.95

Defaults: ``target_node = 1``, ``replications = 20``, ``master_seed = 0``,
``workers = 1``.  Replication ``r`` of sample size number ``i`` uses seed
``SeedSpec(master_seed, i * replications + r)``.  Variances are population
variances (divisor equal to the number of replications).
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import crlb_reference, select_model
from .errors import ConfigError, DegenerateCountsError, LossTomoError
from .estimators import EstimatorSpec, estimate_node, omle
from .simulator import SeedSpec, simulate
from .statistics import build_stats
from .topology import LinkParams, Topology, derive_params, read_topology


@dataclass(frozen=True)
class Selector:
    """Estimator chosen per replication by :func:`select_model`."""

    budget: int
    method: str = "ibe"

    @property
    def tag(self) -> str:
        return f"select:{self.budget}"


def parse_estimator(text: str):
    text = text.strip()
    if text.startswith("select"):
        _, _, arg = text.partition(":")
        try:
            return Selector(int(arg))
        except ValueError:
            raise ConfigError(f"bad selector {text!r}; expected select:<budget>") from None
    return EstimatorSpec.parse(text)


@dataclass
class ExperimentConfig:
    topology: Topology
    alpha: dict[int, float]
    sample_sizes: list[int]
    replications: int = 20
    master_seed: int = 0
    estimators: dict[str, object] = field(default_factory=lambda: {"OMLE": EstimatorSpec("omle")})
    target_node: int = 1
    name: str = "experiment"
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.sample_sizes or any(n < 1 for n in self.sample_sizes):
            raise ConfigError("sample sizes must be positive")
        if list(self.sample_sizes) != sorted(set(self.sample_sizes)):
            raise ConfigError("sample sizes must be strictly ascending")
        if not self.estimators:
            raise ConfigError("no estimators configured")
        if self.target_node == 0 or self.topology.is_leaf(self.target_node):
            raise ConfigError(f"target node {self.target_node} must be an internal node")

    @property
    def params(self) -> LinkParams:
        return derive_params(self.topology, self.alpha)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        return cls.from_text(text, base_dir=os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_text(cls, text: str, base_dir: str = ".") -> "ExperimentConfig":
        cp = configparser.ConfigParser(delimiters=("=",), inline_comment_prefixes=(";",))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        if not cp.has_section("experiment"):
            raise ConfigError("config needs an [experiment] section")
        ex = cp["experiment"]
        if "topology" not in ex:
            raise ConfigError("[experiment] needs a topology path")
        topo_path = os.path.join(base_dir, ex["topology"])
        try:
            topo, alpha = read_topology(topo_path)
        except OSError as exc:
            raise ConfigError(f"cannot read topology {topo_path}: {exc}") from None
        alpha = dict(alpha or {})
        if cp.has_section("alpha"):
            for k, v in cp["alpha"].items():
                alpha[int(k)] = float(v)
        try:
            sizes = [int(v) for v in ex.get("sample_sizes", "").replace(",", " ").split()]
            estimators = {}
            if cp.has_section("estimators"):
                for label, value in cp["estimators"].items():
                    estimators[label] = parse_estimator(value)
            return cls(
                topology=topo,
                alpha=alpha,
                sample_sizes=sizes,
                replications=int(ex.get("replications", "20")),
                master_seed=int(ex.get("master_seed", "0")),
                estimators=estimators or {"OMLE": EstimatorSpec("omle")},
                target_node=int(ex.get("target_node", "1")),
                name=ex.get("name", "experiment"),
                workers=int(ex.get("workers", "1")),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class Record:
    n: int
    rep: int
    estimator: str
    A_hat: float
    loss_hat: float
    flags: tuple[str, ...]


@dataclass
class ExperimentReport:
    name: str
    records: list[Record]
    cells: list[dict]

    def cell(self, estimator: str, n: int) -> dict:
        for c in self.cells:
            if c["estimator"] == estimator and c["n"] == n:
                return c
        raise KeyError((estimator, n))

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "rep", "estimator", "A_hat", "loss_hat", "flags"])
        for r in self.records:
            w.writerow([r.n, r.rep, r.estimator, repr(r.A_hat), repr(r.loss_hat), "|".join(r.flags)])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "n", "mean", "var", "flags", "crlb_low", "crlb_high"])
        for c in self.cells:
            lo, hi = c["crlb"] if isinstance(c["crlb"], tuple) else (c["crlb"], c["crlb"])
            flags = "|".join(f"{k}={v}" for k, v in c["flags"].items())
            w.writerow([c["estimator"], c["n"], repr(c["mean"]), repr(c["var"]), flags,
                        "" if lo is None else repr(lo), "" if hi is None else repr(hi)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "cells": self.cells,
            "records": [r.__dict__ | {"flags": list(r.flags)} for r in self.records],
        }, indent=1)

    def table(self) -> str:
        """Plain-text table: one row per sample size, mean and variance per estimator."""
        labels = list(dict.fromkeys(c["estimator"] for c in self.cells))
        sizes = sorted({c["n"] for c in self.cells})
        head = f"{'samples':>8}" + "".join(f" | {lab[:21]:>21}" for lab in labels)
        sub = f"{'':>8}" + "".join(f" | {'mean':>8} {'var':>12}" for _ in labels)
        lines = [head, sub]
        for n in sizes:
            row = f"{n:>8}"
            for lab in labels:
                c = self.cell(lab, n)
                row += f" | {c['mean']:>8.4f} {c['var']:>12.2E}"
            lines.append(row)
        return "\n".join(lines)


def _estimate_target(stats, topo: Topology, k: int, est) -> tuple[float, frozenset]:
    spec = select_model(stats, topo, k, est.budget, est.method) if isinstance(est, Selector) else est
    try:
        e = estimate_node(stats, topo, k, spec)
        return e.A_hat, e.flags
    except DegenerateCountsError:
        return stats.gamma(k), frozenset({"degenerate_counts"})


def _run_cell(args):
    topo, params, n, seed, target, estimators = args
    obs = simulate(topo, params, n, seed)
    stats = build_stats(obs, topo)
    p = topo.parent(target)
    A_parent = 1.0 if p == 0 else omle(stats, topo, p).A_hat
    out = []
    for label, est in estimators.items():
        A, flags = _estimate_target(stats, topo, target, est)
        flags = set(flags)
        if A_parent <= 0.0:
            loss = float("nan")
            flags.add("undefined")
        else:
            alpha = A / A_parent
            if alpha > 1.0:
                alpha = 1.0
                flags.add("link_clamped_high")
            loss = 1.0 - alpha
        out.append((label, A, loss, tuple(sorted(flags))))
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    params = cfg.params
    topo = cfg.topology
    jobs = []
    keys = []
    for i, n in enumerate(cfg.sample_sizes):
        for r in range(cfg.replications):
            seed = SeedSpec(cfg.master_seed, i * cfg.replications + r)
            jobs.append((topo, params, n, seed, cfg.target_node, cfg.estimators))
            keys.append((n, r))

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = []
        for (n, r), job in zip(keys, jobs):
            try:
                results.append(_run_cell(job))
            except LossTomoError as exc:
                raise type(exc)(f"n={n}, rep={r}: {exc}") from exc

    records = [
        Record(n, r, label, A, loss, flags)
        for (n, r), res in zip(keys, results)
        for label, A, loss, flags in res
    ]

    cells = []
    for label, est in cfg.estimators.items():
        for n in cfg.sample_sizes:
            rs = [rec for rec in records if rec.estimator == label and rec.n == n]
            losses = np.array([rec.loss_hat for rec in rs])
            flag_counts: dict[str, int] = {}
            for rec in rs:
                for f in rec.flags:
                    flag_counts[f] = flag_counts.get(f, 0) + 1
            crlb = None
            if isinstance(est, EstimatorSpec):
                crlb = crlb_reference(params, topo, cfg.target_node, est, n)
            cells.append({
                "estimator": label,
                "spec": est.tag,
                "n": n,
                "mean": float(losses.mean()),
                "var": float(losses.var()),
                "flags": dict(sorted(flag_counts.items())),
                "crlb": crlb,
            })
    return ExperimentReport(cfg.name, records, cells)


def aggregate_records(rows) -> dict[tuple[str, int], tuple[float, float]]:
    """Recompute ``(mean, var)`` per ``(estimator, n)`` from per-replication CSV rows."""
    groups: dict[tuple[str, int], list[float]] = {}
    for row in rows:
        groups.setdefault((row["estimator"], int(row["n"])), []).append(float(row["loss_hat"]))
    return {key: (float(np.mean(v)), float(np.var(v))) for key, v in groups.items()}
