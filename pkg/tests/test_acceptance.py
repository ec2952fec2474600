"""Acceptance gate.  Each ``test_cN_*`` checks criterion N; the terminal summary
prints one PASS/FAIL line per criterion (see conftest.py)."""

import itertools
import json
import math
import os
import time

import numpy as np
import pytest

from losstomo.analysis import efficiency_order, fisher, node_info, psi, select_model, worked_example
from losstomo.cli import main
from losstomo.estimators import OMLE, EstimatorSpec, bwe, estimate_node, ibe, omle, rse
from losstomo.harness import ExperimentConfig, run_experiment
from losstomo.simulator import ObservationMatrix, SeedSpec, simulate
from losstomo.statistics import ExpectedStats, build_stats, inclusion_exclusion_check
from losstomo.topology import Topology, derive_params, star_tree

from treegen import random_alpha, random_tree

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


def _uniform(seed=None, sizes=None):
    cfg = ExperimentConfig.from_file(os.path.join(CONFIGS, "uniform_loss.cfg"))
    if seed is not None:
        cfg.master_seed = seed
    if sizes is not None:
        cfg.sample_sizes = sizes
    return cfg


# -- 1 -------------------------------------------------------------------------

def test_c1_worked_example(capsys):
    a = 0.99
    closed = (a - a * a, 1 / (3 * (1 - a) + a * a) - a * a, 1 / a - a * a, 1 / (a * a) - a * a)
    assert main(["example", "--alpha", "0.99", "--format", "json"]) == 0
    got = json.loads(capsys.readouterr().out)
    values = [got[k] for k in ("direct", "omle", "ibe_pair", "ibe_triple")]
    for v, c in zip(values, closed):
        assert abs(v - c) <= 1e-9
    assert [round(v, 2) for v in values] == [0.01, 0.01, 0.03, 0.04]
    best = min(_elapsed(worked_example, a) for _ in range(50))
    assert best < 1e-3


def _elapsed(fn, *args):
    t = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t


# -- 2 -------------------------------------------------------------------------

def test_c2_inclusion_exclusion():
    rng = np.random.default_rng(20)
    start = time.perf_counter()
    residuals = []
    for t in range(1000):
        width = int(rng.choice([2, 3, 4, 5, 8]))
        n = int(rng.integers(1, 257))
        topo = star_tree(width)
        bits = rng.random((n, width)) < rng.uniform(0.05, 0.95)
        s = build_stats(ObservationMatrix.from_bits(bits, topo.receivers), topo)
        residuals.append(inclusion_exclusion_check(s, 1))
    assert time.perf_counter() - start < 10
    assert residuals == [0] * 1000


# -- 3 -------------------------------------------------------------------------

def test_c3_expectation_fixed_point():
    rng = np.random.default_rng(30)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        topo = random_tree(rng, max_depth=4, max_children=5)
        p = derive_params(topo, random_alpha(rng, topo, 0.3, 0.999))
        exp = ExpectedStats(p)
        for k in topo.internal_nodes():
            cs = topo.children(k)
            got = [omle(exp, topo, k).A_hat]
            for i in range(2, len(cs) + 1):
                got.append(bwe(exp, topo, k, i).A_hat)
                for x in itertools.combinations(cs, i):
                    got.append(rse(exp, topo, k, x).A_hat)
                    got.append(ibe(exp, topo, k, x).A_hat)
            worst = max(worst, max(abs(g - p.A[k]) for g in got))
    assert time.perf_counter() - start < 30
    assert worst <= 1e-8


# -- 4 -------------------------------------------------------------------------

def test_c4_binary_equivalence():
    rng = np.random.default_rng(40)
    done = 0
    while done < 500:
        topo = random_tree(rng, max_depth=3, max_children=2)
        alpha = random_alpha(rng, topo, 0.4, 1.0)
        s = build_stats(simulate(topo, alpha, int(rng.integers(50, 3000)), SeedSpec(40, done)), topo)
        k = int(rng.choice(topo.internal_nodes()))
        pair = topo.children(k)
        if s.count_I(k, pair) == 0:
            continue
        values = [omle(s, topo, k).A_hat, rse(s, topo, k, pair).A_hat,
                  bwe(s, topo, k, 2).A_hat, ibe(s, topo, k, pair).A_hat]
        assert max(values) - min(values) <= 1e-12, values
        done += 1


# -- 5 -------------------------------------------------------------------------

VAR_BAND = (1.7e-6 / 3, 1.9e-6 * 3)


def _uniform_passes(seed):
    report = run_experiment(_uniform(seed, [2700]))
    bad = []
    for c in report.cells:
        if not (0.008 <= c["mean"] <= 0.012 and VAR_BAND[0] <= c["var"] <= VAR_BAND[1]):
            bad.append((c["estimator"], c["mean"], c["var"]))
    return bad


def test_c5_uniform_fixed_seed():
    start = time.perf_counter()
    assert _uniform_passes(None) == []
    assert time.perf_counter() - start < 60


def test_c5_uniform_fresh_seeds():
    passes = sum(not _uniform_passes(seed) for seed in range(10))
    assert passes >= 9


# -- 6 -------------------------------------------------------------------------

def _crlb_ratio(spec, seed):
    cfg = _uniform()
    topo, p = cfg.topology, cfg.params
    n, reps = 100_000, 100
    values = []
    for r in range(reps):
        s = build_stats(simulate(topo, p, n, SeedSpec(seed, r)), topo)
        values.append(estimate_node(s, topo, 1, spec).A_hat)
    bound = node_info(p, topo, 1, spec).crlb(n)
    return float(np.var(values)) / bound


def test_c6_crlb_omle():
    start = time.perf_counter()
    ratio = _crlb_ratio(OMLE, 6)
    print(f"OMLE variance / bound = {ratio:.3f}")
    assert 0.5 <= ratio <= 2.0
    assert time.perf_counter() - start < 120


def test_c6_crlb_ibe_pair():
    start = time.perf_counter()
    ratio = _crlb_ratio(EstimatorSpec("ibe", subset=(2, 3)), 6)
    print(f"IBE pair variance / bound = {ratio:.3f}")
    assert time.perf_counter() - start < 120
    assert 0.5 <= ratio <= 2.0


# -- 7 -------------------------------------------------------------------------

def test_c7_efficiency_ordering():
    rng = np.random.default_rng(70)
    for _ in range(100):
        topo = random_tree(rng, max_depth=3, max_children=6)
        p = derive_params(topo, random_alpha(rng, topo, 0.05, 0.999))
        for k in topo.internal_nodes():
            order = efficiency_order(p, topo, k)
            for x, y in order.edges:
                assert order.psi[y] <= order.psi[x]
            # every pair of nested subsets, not just covering ones
            for y in order.psi:
                for size in range(2, len(y)):
                    for x in itertools.combinations(y, size):
                        assert psi(p, k, y) <= psi(p, k, x)
    for A in np.linspace(0.05, 0.95, 19):
        deltas = np.linspace(0.01, 1.0, 200)
        bounds = [fisher("omle", float(A), float(d)).crlb_var_per_obs for d in deltas]
        assert all(b1 > b2 for b1, b2 in zip(bounds, bounds[1:]))


# -- 8 -------------------------------------------------------------------------

def test_c8_model_selection():
    cfg = ExperimentConfig.from_file(os.path.join(CONFIGS, "lossy_half.cfg"))
    topo, p = cfg.topology, cfg.params
    good_group = {k for k in topo.children(1) if p.alpha[k] == 0.99}
    assert len(good_group) == 4
    start = time.perf_counter()
    for budget in (2, 3):
        inside = 0
        losses = []
        for r in range(100):
            s = build_stats(simulate(topo, p, 2700, SeedSpec(cfg.master_seed, r)), topo)
            spec = select_model(s, topo, 1, budget)
            inside += set(spec.subset) <= good_group
            losses.append(1.0 - estimate_node(s, topo, 1, spec).A_hat)
        assert inside >= 95, (budget, inside)
        assert 0.045 <= float(np.mean(losses)) <= 0.055
    assert time.perf_counter() - start < 120


# -- 9 -------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["uniform_loss", "two_lossy", "lossy_half"])
def test_c9_determinism(tmp_path, name, capsys):
    cfg = os.path.join(CONFIGS, f"{name}.cfg")
    outs = []
    for run, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        d = tmp_path / run
        assert main(["experiment", "--config", cfg, "--out-dir", str(d), "--workers", workers]) == 0
        outs.append({f: (d / f).read_bytes() for f in sorted(os.listdir(d))})
    capsys.readouterr()
    assert outs[0] == outs[1] == outs[2]
