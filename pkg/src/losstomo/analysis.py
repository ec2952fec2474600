"""Fisher information, variance bounds, efficiency ordering and model selection.

For an estimator whose per-probe observation is Bernoulli with success
probability ``A * delta`` the information about ``A`` is
``delta / (A * (1 - A * delta))`` and the variance bound is its reciprocal,
``A / delta - A**2``.  ``delta`` is the subtree union rate ``beta_k(x)`` for
OMLE and RSE and the intersection rate ``psi_k(x)`` for IBE.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

from .errors import BoundaryError, DegenerateCountsError, EstimatorSpecError, ParameterError
from .estimators import OMLE, EstimatorSpec, EstimateReport
from .statistics import DEFAULT_CAP, enumerate_subsets
from .topology import LinkParams, Topology


@dataclass(frozen=True)
class PassRates:
    """Path rates ``A`` and end-to-end rates ``gamma`` indexed by node.

    ``source`` records whether they are ground truth or plug-in estimates so
    the two never get mixed silently.
    """

    A: Mapping[int, float]
    gamma: Mapping[int, float]
    source: str

    @classmethod
    def from_params(cls, params: LinkParams) -> "PassRates":
        return cls(dict(enumerate(map(float, params.A))), dict(enumerate(map(float, params.gamma))), "true")

    @classmethod
    def from_estimates(cls, report: EstimateReport, stats) -> "PassRates":
        A = {0: 1.0, **report.A_hat()}
        gamma = {k: stats.gamma(k) for k in A}
        return cls(A, gamma, "plug-in")


def _rates(rates) -> PassRates:
    if isinstance(rates, LinkParams):
        return PassRates.from_params(rates)
    return rates


def _child_ratios(rates, k: int, x) -> list[float]:
    rates = _rates(rates)
    try:
        A = rates.A[k]
        ratios = [rates.gamma[j] / A for j in x]
    except KeyError as exc:
        raise ParameterError(f"missing pass rate for node {exc.args[0]}") from None
    return ratios


def psi(rates, k: int, x) -> float:
    """Probability that a probe at ``k`` is seen by every subtree in ``x``."""
    return math.prod(_child_ratios(rates, k, x))


def beta_subset(rates, k: int, x) -> float:
    """Probability that a probe at ``k`` is seen by at least one subtree in ``x``."""
    ratios = _child_ratios(rates, k, x)
    if any(r > 1.0 + 1e-12 for r in ratios):
        raise ParameterError(f"some gamma_j exceeds A_{k}; rates are inconsistent")
    return 1.0 - math.prod(1.0 - r for r in ratios)


@dataclass(frozen=True)
class InfoResult:
    fisher_per_obs: float
    crlb_var_per_obs: float
    delta: float
    method: EstimatorSpec
    A: float
    source: str = "true"

    def crlb(self, n: int) -> float:
        """Variance bound for ``n`` probes."""
        return self.crlb_var_per_obs / n


def fisher(method: EstimatorSpec, A: float, delta: float, source: str = "true") -> InfoResult:
    """Per-probe Fisher information about ``A`` and the matching variance bound."""
    if isinstance(method, str):
        method = EstimatorSpec.parse(method)
    if method.method == "bwe":
        raise EstimatorSpecError("bwe has no point information value; use bwe_info_bounds")
    if not 0.0 < delta <= 1.0:
        raise ParameterError(f"delta must lie in (0, 1], got {delta}")
    if not 0.0 < A <= 1.0:
        raise ParameterError(f"A must lie in (0, 1], got {A}")
    if A == 1.0:
        raise BoundaryError("boundary: information is unbounded at A = 1")
    info = delta / (A * (1.0 - A * delta))
    return InfoResult(info, A / delta - A * A, delta, method, A, source)


def delta_for(rates, topo: Topology, k: int, spec: EstimatorSpec) -> float:
    cs = topo.children(k)
    if spec.method == "omle":
        return beta_subset(rates, k, cs)
    x = spec.subset if spec.subset is not None else cs
    if spec.method == "rse":
        return beta_subset(rates, k, x)
    if spec.method == "ibe":
        return psi(rates, k, x)
    raise EstimatorSpecError(f"no single delta for {spec.method}")


def node_info(rates, topo: Topology, k: int, spec: EstimatorSpec) -> InfoResult:
    rates = _rates(rates)
    return fisher(spec, rates.A[k], delta_for(rates, topo, k, spec), rates.source)


def bwe_info_bounds(topo: Topology, k: int, i: int, A: float, psi_value: float) -> tuple[float, float]:
    """Range of the per-probe information of the degree-``i`` block estimator.

    The lower end is the information of a single size-``i`` subset; the upper
    end multiplies it by the number of such subsets.
    """
    n_children = len(topo.children(k))
    if not 2 <= i <= n_children:
        raise EstimatorSpecError(f"degree {i} invalid for node {k} with {n_children} children")
    lower = fisher(EstimatorSpec("ibe"), A, psi_value).fisher_per_obs
    return lower, math.comb(n_children, i) * lower


@dataclass(frozen=True)
class EfficiencyOrder:
    """Subsets of ``d_k`` (size 2 and up) ordered by IBE efficiency.

    ``edges`` holds the covering relation of the inclusion order: ``(x, y)``
    means ``x`` is at least as efficient as ``y`` and ``y`` adds one child.
    ``ranking`` sorts every subset by ``psi`` descending.
    """

    node: int
    psi: dict[tuple[int, ...], float]
    edges: list[tuple[tuple[int, ...], tuple[int, ...]]]
    ranking: list[tuple[int, ...]]

    @property
    def best(self) -> tuple[int, ...]:
        return self.ranking[0]

    @property
    def worst(self) -> tuple[int, ...]:
        return self.ranking[-1]


def efficiency_order(rates, topo: Topology, k: int, cap: int = DEFAULT_CAP) -> EfficiencyOrder:
    cs = topo.children(k)
    if len(cs) < 2:
        raise EstimatorSpecError(f"node {k} has fewer than two children")
    values: dict[tuple[int, ...], float] = {}
    order: list[tuple[int, ...]] = []
    for i in range(2, len(cs) + 1):
        for x in enumerate_subsets(topo, k, i, cap):
            values[x] = psi(rates, k, x)
            order.append(x)
    edges = []
    for y in order:
        if len(y) > 2:
            for drop in range(len(y)):
                edges.append((y[:drop] + y[drop + 1:], y))
    # stable sort keeps the canonical order among ties
    ranking = sorted(order, key=lambda x: -values[x])
    return EfficiencyOrder(k, values, edges, ranking)


def select_model(
    stats,
    topo: Topology,
    k: int,
    budget: int,
    method: str = "ibe",
    cap: int = DEFAULT_CAP,
) -> EstimatorSpec:
    """Pick the subset of children whose observable rates promise the most information.

    Candidates are all subsets with ``2 <= |x| <= budget``, ranked by
    ``prod_{j in x} gamma_hat_j``; ties go to the smaller subset and then to
    canonical order.  When ``budget`` covers every child the full-likelihood
    estimator is returned instead.
    """
    cs = topo.children(k)
    if topo.is_leaf(k) or k == 0:
        raise EstimatorSpecError(f"node {k} is not an internal node")
    if budget < 2:
        raise EstimatorSpecError("budget must be at least 2")
    if method not in ("ibe", "rse"):
        raise EstimatorSpecError("model selection returns an ibe or rse spec")
    if len(cs) <= budget:
        return OMLE
    best = None
    best_key = None
    for i in range(2, budget + 1):
        for x in enumerate_subsets(topo, k, i, cap):
            score = math.prod(stats.gamma(j) for j in x)
            if score <= 0.0:
                continue
            key = (score, -i)
            if best_key is None or key > best_key:
                best, best_key = x, key
    if best is None:
        raise DegenerateCountsError(f"node {k}: no subset with positive counts")
    return EstimatorSpec(method, subset=best)


class WorkedExample(NamedTuple):
    direct: float
    omle: float
    ibe_pair: float
    ibe_triple: float


def worked_example(alpha: float) -> WorkedExample:
    """Per-probe variances for a node with three receivers, everything at pass rate ``alpha``.

    Compares direct measurement of the path with OMLE, IBE on a pair and IBE
    on all three children.
    """
    if not 0.0 < alpha < 1.0:
        raise BoundaryError(f"alpha must lie strictly inside (0, 1), got {alpha}")
    a2 = alpha * alpha
    return WorkedExample(
        alpha - a2,
        1.0 / (3.0 * (1.0 - alpha) + a2) - a2,
        1.0 / alpha - a2,
        1.0 / a2 - a2,
    )


def analysis_rows(rates, topo: Topology, specs=None, stats=None, budget: int = 2) -> list[dict]:
    """One row per internal node and method: delta, information and variance bound.

    With ``stats`` given, each node also reports the spec :func:`select_model`
    would choose under ``budget``.
    """
    rates = _rates(rates)
    rows = []
    for k in topo.internal_nodes():
        cs = topo.children(k)
        node_specs = specs or [OMLE, EstimatorSpec("ibe", subset=cs[:2]), EstimatorSpec("ibe")]
        selected = None
        if stats is not None:
            try:
                selected = select_model(stats, topo, k, budget).tag
            except DegenerateCountsError:
                selected = None
        for spec in node_specs:
            if spec.subset is not None and not set(spec.subset) <= set(cs):
                continue
            if spec.method == "bwe":
                i = min(spec.degree or 2, len(cs))
                x = cs[:i]
                lo, hi = bwe_info_bounds(topo, k, i, rates.A[k], psi(rates, k, x))
                rows.append({
                    "node": k, "method": EstimatorSpec("bwe", degree=i).tag,
                    "delta": psi(rates, k, x), "fisher": lo, "fisher_upper": hi,
                    "crlb": 1.0 / lo, "selected_spec": selected, "source": rates.source,
                })
                continue
            try:
                res = node_info(rates, topo, k, spec)
            except BoundaryError:
                rows.append({
                    "node": k, "method": spec.tag, "delta": delta_for(rates, topo, k, spec),
                    "fisher": float("inf"), "fisher_upper": None, "crlb": 0.0,
                    "selected_spec": selected, "source": rates.source,
                })
                continue
            rows.append({
                "node": k, "method": spec.tag, "delta": res.delta, "fisher": res.fisher_per_obs,
                "fisher_upper": None, "crlb": res.crlb_var_per_obs, "selected_spec": selected,
                "source": rates.source,
            })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def rows_to_json(rows: list[dict]) -> str:
    return json.dumps(rows, indent=1)


def crlb_reference(params: LinkParams, topo: Topology, k: int, spec: EstimatorSpec, n: int):
    """Variance bound for ``n`` probes, or a ``(low, high)`` range for BWE."""
    rates = PassRates.from_params(params)
    A = rates.A[k]
    if A >= 1.0:
        return 0.0
    if spec.method == "bwe":
        cs = topo.children(k)
        i = min(spec.degree or 2, len(cs))
        lo, hi = bwe_info_bounds(topo, k, i, A, psi(rates, k, cs[:i]))
        return (1.0 / (hi * n), 1.0 / (lo * n))
    return node_info(rates, topo, k, spec).crlb(n)

