import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from losstomo.analysis import node_info
from losstomo.errors import DegenerateCountsError, EstimatorSpecError
from losstomo.estimators import (
    OMLE,
    EstimatorSpec,
    bwe,
    estimate_node,
    estimate_tree,
    ibe,
    omle,
    rse,
    solve_likelihood,
)
from losstomo.simulator import ObservationMatrix, SeedSpec, simulate
from losstomo.statistics import ExpectedStats, build_stats
from losstomo.topology import complete_tree, derive_params, parse_topology, star_tree

from treegen import EnumeratedStats, random_alpha, random_tree


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_expected_counts_are_a_fixed_point(seed):
    rng = np.random.default_rng(seed)
    topo = random_tree(rng, max_depth=3, max_children=6)
    p = derive_params(topo, random_alpha(rng, topo))
    exp = ExpectedStats(p)
    for k in topo.internal_nodes():
        cs = topo.children(k)
        assert omle(exp, topo, k).A_hat == pytest.approx(p.A[k], abs=1e-9)
        assert rse(exp, topo, k, cs[:2]).A_hat == pytest.approx(p.A[k], abs=1e-9)
        assert ibe(exp, topo, k, cs[-2:]).A_hat == pytest.approx(p.A[k], abs=1e-9)
        for i in range(2, len(cs) + 1):
            assert bwe(exp, topo, k, i).A_hat == pytest.approx(p.A[k], abs=1e-9)


def test_fixed_point_with_enumerated_oracle():
    topo = parse_topology("1 0\n2 1\n3 1\n4 1\n5 2\n6 2\n7 4\n8 4\n9 4\n")
    alpha = np.linspace(0.55, 0.98, 10)
    oracle = EnumeratedStats(topo, alpha)
    for k in topo.internal_nodes():
        assert omle(oracle, topo, k).A_hat == pytest.approx(oracle.reached_prob[k], abs=1e-9)
        assert ibe(oracle, topo, k, topo.children(k)).A_hat == pytest.approx(
            oracle.reached_prob[k], abs=1e-9)


def test_binary_closed_form():
    A, flags = solve_likelihood([0.5, 0.4], 0.7)
    assert A == pytest.approx(0.5 * 0.4 / 0.2)
    assert not flags
    A, flags = solve_likelihood([0.9, 0.9], 0.995)
    assert A == 1.0 and "clamped_high" in flags


def test_three_children_against_polynomial_roots():
    # 1 - u/A = prod(1 - g/A)  <=>  A^3 - u A^2 = prod(A - g)  (times A^3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        g = rng.uniform(0.2, 0.8, 3)
        A_true = rng.uniform(max(g) + 0.01, 1.0)
        u = A_true * (1 - np.prod(1 - g / A_true))
        poly = np.poly(g) - np.array([1.0, -u, 0.0, 0.0])
        roots = [r.real for r in np.roots(poly) if abs(r.imag) < 1e-9 and u <= r.real <= 1.0]
        A, flags = solve_likelihood(g, u)
        assert "root_bracket_used" in flags
        assert A == pytest.approx(A_true, abs=1e-10)
        assert any(abs(A - r) < 1e-8 for r in roots)


def test_omle_matches_numerical_likelihood_maximum():
    # independent oracle: maximise the multinomial likelihood of the receiver patterns
    topo = star_tree(3)
    obs = simulate(topo, [1, 0.8, 0.7, 0.6, 0.9], 3000, SeedSpec(21))
    bits = obs.bits
    patterns = list(itertools.product([0, 1], repeat=3))
    counts = np.array([np.sum(np.all(bits == pat, axis=1)) for pat in patterns])

    def nll(z):
        a = 1 / (1 + np.exp(-z))
        probs = []
        for pat in patterns:
            inner = np.prod([a[j + 1] if b else 1 - a[j + 1] for j, b in enumerate(pat)])
            probs.append(a[0] * inner + (0 if any(pat) else 1 - a[0]))
        return -np.sum(counts * np.log(probs))

    res = minimize(nll, np.zeros(4), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 20000, "maxfev": 20000})
    A_mle = 1 / (1 + np.exp(-res.x[0]))
    assert omle(build_stats(obs, topo), topo, 1).A_hat == pytest.approx(A_mle, abs=1e-5)


def test_ibe_and_bwe_hand_values():
    topo = star_tree(3)
    obs = ObservationMatrix.from_bits(
        [[1, 1, 1], [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]],
        [2, 3, 4],
    )
    s = build_stats(obs, topo)
    g = 4 / 8
    # I(2,3) = 2 of 8 probes
    assert ibe(s, topo, 1, (2, 3)).A_hat == pytest.approx(g * 3 / 8 / (2 / 8))
    assert ibe(s, topo, 1, (2, 3, 4)).A_hat == pytest.approx(math.sqrt(g * 3 / 8 * 3 / 8 / (1 / 8)))
    num = g * 3 / 8 + g * 3 / 8 + 3 / 8 * 3 / 8
    den = (2 + 2 + 2) / 8
    e = bwe(s, topo, 1, 2)
    assert e.A_hat == pytest.approx(num / den)
    assert e.info["uniqueness_condition"] == (num < den)


def test_degenerate_nodes():
    topo = star_tree(2)
    dead = ObservationMatrix.from_bits(np.zeros((10, 2)), [2, 3])
    s = build_stats(dead, topo)
    e = omle(s, topo, 1)
    assert e.A_hat == 0.0 and "degenerate_counts" in e.flags
    with pytest.raises(DegenerateCountsError):
        ibe(s, topo, 1, (2, 3))
    report = estimate_tree(dead, topo, EstimatorSpec("ibe"))
    assert "degenerate_counts" in report.flags(1)
    assert "undefined" in report.links[2].flags


def test_one_child_never_sees_anything():
    topo = star_tree(3)
    obs = simulate(topo, [1, 0.9, 0.8, 0.8, 1e-300], 1000, SeedSpec(0))
    e = omle(build_stats(obs, topo), topo, 1)
    assert 0 < e.A_hat <= 1


def test_spec_parsing_and_validation():
    assert EstimatorSpec.parse("omle") == OMLE
    assert EstimatorSpec.parse("BWE:3") == EstimatorSpec("bwe", degree=3)
    assert EstimatorSpec.parse("ibe:2,3").subset == (2, 3)
    assert EstimatorSpec.parse("rse:4,5,6").tag == "rse:4,5,6"
    for bad in ("mle", "bwe:1", "bwe:2,3", "ibe:2", "omle:2,3", "ibe:a,b"):
        with pytest.raises(EstimatorSpecError):
            EstimatorSpec.parse(bad)
    topo = star_tree(3)
    s = ExpectedStats(derive_params(topo, [1, 0.9, 0.9, 0.9, 0.9]))
    with pytest.raises(EstimatorSpecError):
        estimate_node(s, topo, 1, EstimatorSpec("ibe", subset=(2, 9)))
    with pytest.raises(EstimatorSpecError):
        omle(s, topo, 2)
    with pytest.raises(EstimatorSpecError):
        estimate_node(s, topo, 1, EstimatorSpec("direct"))
    assert estimate_node(s, topo, 1, EstimatorSpec("bwe", degree=9)).method.degree == 3


def test_policy_forms():
    topo = complete_tree(2, 2)
    obs = simulate(topo, np.full(topo.n_nodes, 0.9), 2000, SeedSpec(1))
    by_map = estimate_tree(obs, topo, {2: EstimatorSpec("ibe")})
    assert by_map.nodes[2].method.method == "ibe"
    assert by_map.nodes[3].method == OMLE
    assert by_map.nodes[4].method.method == "direct"
    by_fn = estimate_tree(obs, topo, lambda s, t, k: EstimatorSpec("bwe"))
    assert by_fn.nodes[1].method.method == "bwe"


def test_report_outputs():
    topo = star_tree(2)
    obs = simulate(topo, [1, 0.9, 0.8, 0.8], 500, SeedSpec(3))
    report = estimate_tree(obs, topo)
    lines = report.to_csv().splitlines()
    assert lines[0] == "node,link,method,A_hat,alpha_hat,loss_hat,flags"
    assert len(lines) == 4
    assert set(report.to_dict()["links"]) == {"1", "2", "3"}
    for k, loss in report.loss().items():
        assert 0.0 <= loss <= 1.0


def test_binary_depth3_every_link_within_three_sigma():
    topo = complete_tree(2, 3)
    alpha = np.full(16, 0.99)
    p = derive_params(topo, alpha)
    n = 1_000_000
    report = estimate_tree(simulate(topo, p, n, SeedSpec(1234)), topo)
    exp = ExpectedStats(p)
    for k in range(1, 16):
        A_hat = report.nodes[k].A_hat
        if topo.is_leaf(k):
            sd = math.sqrt(p.A[k] * (1 - p.A[k]) / n)
        else:
            sd = math.sqrt(node_info(p, topo, k, OMLE).crlb(n))
        assert abs(A_hat - p.A[k]) < 3 * sd, k
        assert abs(report.links[k].loss_hat - 0.01) < 0.005
    assert exp.gamma(1) == pytest.approx(p.gamma[1])


def _ibe_pair_delta_variance(g2, g3, inter):
    """Delta-method variance per probe of g2*g3/I from the multinomial covariances."""
    cov = np.array([
        [g2 * (1 - g2), inter - g2 * g3, inter * (1 - g2)],
        [inter - g2 * g3, g3 * (1 - g3), inter * (1 - g3)],
        [inter * (1 - g2), inter * (1 - g3), inter * (1 - inter)],
    ])
    grad = np.array([g3 / inter, g2 / inter, -g2 * g3 / inter**2])
    return float(grad @ cov @ grad)


def test_ibe_pair_variance_follows_delta_method():
    # the plug-in gamma_hat terms are correlated with I, which pulls the
    # variance well below the bound built from psi alone
    topo = star_tree(8)
    p = derive_params(topo, np.full(10, 0.99))
    exp = ExpectedStats(p)
    n, reps = 100_000, 60
    pred = _ibe_pair_delta_variance(exp.gamma(2), exp.gamma(3), exp.inter_frac(1, (2, 3))) / n
    values = [ibe(build_stats(simulate(topo, p, n, SeedSpec(77, r)), topo), topo, 1, (2, 3)).A_hat
              for r in range(reps)]
    ratio = np.var(values) / pred
    assert 0.6 < ratio < 1.6
    bound = node_info(p, topo, 1, EstimatorSpec("ibe", subset=(2, 3))).crlb(n)
    assert pred / bound == pytest.approx(1 / 3, abs=0.01)
