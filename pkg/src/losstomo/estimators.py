"""Path pass-rate estimators for one internal node, and tree-wide assembly.

Four families are provided.  All of them read only ``gamma(j)``,
``union_frac(k, x)`` and ``inter_frac(k, x)`` from a stats object, so an
:class:`~losstomo.statistics.ExpectedStats` can stand in for real data.

* ``omle``: the full-likelihood estimator; root of
  ``1 - gamma_k/A = prod_{j in d_k} (1 - gamma_j/A)``.
* ``rse``: the same equation restricted to a subset ``x`` of the children,
  with ``n_k(x)/n`` in place of ``gamma_k``.
* ``bwe``: the explicit block estimator over all size-``i`` subsets,
  ``(sum_x prod gamma_j / sum_x I_k(x)/n) ** (1/(i-1))``.
* ``ibe``: the explicit estimator for a single subset,
  ``(prod gamma_j / (I_k(x)/n)) ** (1/(|x|-1))``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateCountsError, EstimatorSpecError
from .simulator import ObservationMatrix
from .statistics import DEFAULT_CAP, build_stats, canonical_subset, enumerate_subsets
from .topology import LinkEstimate, Topology, links_from_paths

METHODS = ("omle", "rse", "bwe", "ibe")
# tag carried by receiver estimates, which are measured rather than inferred
_TAGS = METHODS + ("direct",)
ROOT_TOL = 1e-12


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to run at a node.

    ``subset`` applies to RSE and IBE (``None`` means all children);
    ``degree`` applies to BWE (``None`` means 2).
    """

    method: str
    subset: tuple[int, ...] | None = None
    degree: int | None = None

    def __post_init__(self):
        method = self.method.lower()
        object.__setattr__(self, "method", method)
        if method not in _TAGS:
            raise EstimatorSpecError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.subset is not None:
            object.__setattr__(self, "subset", tuple(int(j) for j in self.subset))
            if method not in ("rse", "ibe"):
                raise EstimatorSpecError(f"{method} does not take a subset")
            if len(self.subset) < 2:
                raise EstimatorSpecError(f"{method} needs a subset of at least two children")
        if self.degree is not None:
            if method != "bwe":
                raise EstimatorSpecError(f"{method} does not take a degree")
            if self.degree < 2:
                raise EstimatorSpecError("bwe degree must be at least 2")

    @classmethod
    def parse(cls, text: str) -> "EstimatorSpec":
        """Parse ``omle``, ``bwe:3``, ``ibe:2,3`` or ``rse:4,5,6``."""
        method, _, arg = text.strip().partition(":")
        method = method.strip().lower()
        arg = arg.strip()
        if not arg:
            return cls(method)
        try:
            values = tuple(int(v) for v in arg.split(","))
        except ValueError:
            raise EstimatorSpecError(f"bad estimator argument in {text!r}") from None
        if method == "bwe":
            if len(values) != 1:
                raise EstimatorSpecError("bwe takes a single degree")
            return cls(method, degree=values[0])
        return cls(method, subset=values)

    @property
    def tag(self) -> str:
        if self.subset is not None:
            return f"{self.method}:{','.join(map(str, self.subset))}"
        if self.degree is not None:
            return f"{self.method}:{self.degree}"
        return self.method

    def __str__(self):
        return self.tag


OMLE = EstimatorSpec("omle")
DIRECT = EstimatorSpec("direct")


@dataclass(frozen=True)
class NodeEstimate:
    """Estimated path pass rate for one node.

    ``A_hat`` lies in (0, 1] except for degenerate nodes where nothing below
    the node was observed; those carry ``degenerate_counts`` and may be 0.
    """

    node: int
    A_hat: float
    method: EstimatorSpec
    flags: frozenset = frozenset()
    info: Mapping = field(default_factory=dict)


def _equation(gammas: np.ndarray, u: float) -> tuple[Callable, Callable]:
    def F(A):
        return 1.0 - u / A - np.prod(1.0 - gammas / A)

    def dF(A):
        miss = 1.0 - gammas / A
        total = np.prod(miss)
        return u / A**2 - total * np.sum((gammas / A**2) / miss)

    return F, dF


def solve_likelihood(gammas, u: float) -> tuple[float, frozenset]:
    """Solve ``1 - u/A = prod_j (1 - gamma_j/A)`` on ``[u, 1]``.

    ``u`` is the observed union rate of the subtrees whose rates are
    ``gammas``.  Children never observed (``gamma_j = 0``) are dropped.  Two
    remaining children use the closed form; more use a bracketed root search
    followed by Newton polishing.  Returns the estimate and diagnostic flags.
    """
    g = np.asarray([x for x in gammas if x > 0.0], dtype=float)
    if len(g) < 2:
        return float(u), frozenset({"degenerate_counts"})
    if len(g) == 2:
        inter = g[0] + g[1] - u
        if inter > 0.0:
            A = g[0] * g[1] / inter
            if A > 1.0:
                return 1.0, frozenset({"clamped_high"})
            return float(A), frozenset()

    F, dF = _equation(g, u)
    lo = float(u)
    f_lo = F(lo)
    if f_lo >= 0.0:
        # a child saw every probe any sibling saw: the root sits on the bracket edge
        return lo, frozenset()
    f_hi = F(1.0)
    if abs(f_hi) <= ROOT_TOL:
        return 1.0, frozenset()
    if f_hi < 0.0:
        if abs(f_lo) <= abs(f_hi):
            return lo, frozenset({"degenerate_counts", "clamped_low"})
        return 1.0, frozenset({"degenerate_counts", "clamped_high"})

    A = brentq(F, lo, 1.0, xtol=ROOT_TOL / 8, rtol=4 * np.finfo(float).eps, maxiter=200)
    for _ in range(3):
        f = F(A)
        if f == 0.0:
            break
        d = dF(A)
        if d == 0.0 or not np.isfinite(d):
            break
        step = A - f / d
        if not lo <= step <= 1.0 or abs(F(step)) >= abs(f):
            break
        A = step
    return float(A), frozenset({"root_bracket_used"})


def _check_internal(topo: Topology, k: int):
    if topo.is_leaf(k) or k == 0:
        raise EstimatorSpecError(f"node {k} is not an internal node")
    if len(topo.children(k)) < 2:
        raise EstimatorSpecError(f"node {k} has fewer than two children")


def omle(stats, topo: Topology, k: int) -> NodeEstimate:
    _check_internal(topo, k)
    cs = topo.children(k)
    A, flags = solve_likelihood([stats.gamma(j) for j in cs], stats.gamma(k))
    return NodeEstimate(k, A, OMLE, flags)


def rse(stats, topo: Topology, k: int, x) -> NodeEstimate:
    _check_internal(topo, k)
    x = _subset(topo, k, x)
    A, flags = solve_likelihood([stats.gamma(j) for j in x], stats.union_frac(k, x))
    return NodeEstimate(k, A, EstimatorSpec("rse", subset=x), flags)


def _clamp(A: float, flags: set) -> float:
    if A > 1.0:
        flags.add("clamped_high")
        return 1.0
    return A


def bwe(stats, topo: Topology, k: int, i: int, cap: int = DEFAULT_CAP) -> NodeEstimate:
    _check_internal(topo, k)
    if not 2 <= i <= len(topo.children(k)):
        raise EstimatorSpecError(f"bwe degree {i} invalid for node {k} with {len(topo.children(k))} children")
    num = 0.0
    den = 0.0
    for x in enumerate_subsets(topo, k, i, cap):
        num += math.prod(stats.gamma(j) for j in x)
        den += stats.inter_frac(k, x)
    if den <= 0.0:
        raise DegenerateCountsError(f"node {k}: no probe seen simultaneously by any {i} subtrees")
    flags: set = set()
    A = _clamp((num / den) ** (1.0 / (i - 1)), flags)
    return NodeEstimate(
        k, A, EstimatorSpec("bwe", degree=i), frozenset(flags),
        {"uniqueness_condition": num < den},
    )


def ibe(stats, topo: Topology, k: int, x) -> NodeEstimate:
    _check_internal(topo, k)
    x = _subset(topo, k, x)
    inter = stats.inter_frac(k, x)
    if inter <= 0.0:
        raise DegenerateCountsError(f"node {k}: no probe seen simultaneously by subtrees {x}")
    flags: set = set()
    prod = math.prod(stats.gamma(j) for j in x)
    A = _clamp((prod / inter) ** (1.0 / (len(x) - 1)), flags)
    return NodeEstimate(k, A, EstimatorSpec("ibe", subset=x), frozenset(flags))


def _subset(topo: Topology, k: int, x) -> tuple[int, ...]:
    try:
        x = canonical_subset(topo, k, x)
    except ValueError as exc:
        raise EstimatorSpecError(str(exc)) from None
    if len(x) < 2:
        raise EstimatorSpecError("subset needs at least two children")
    return x


def estimate_node(stats, topo: Topology, k: int, spec: EstimatorSpec) -> NodeEstimate:
    """Run ``spec`` at node ``k``, filling in defaults for subset/degree."""
    cs = topo.children(k)
    if spec.method == "direct":
        raise EstimatorSpecError("'direct' is reserved for receivers")
    if spec.method == "omle":
        return omle(stats, topo, k)
    if spec.method == "bwe":
        return bwe(stats, topo, k, min(spec.degree or 2, len(cs)))
    x = spec.subset if spec.subset is not None else cs
    if spec.method == "rse":
        return rse(stats, topo, k, x)
    return ibe(stats, topo, k, x)


@dataclass
class EstimateReport:
    nodes: dict[int, NodeEstimate]
    links: dict[int, LinkEstimate]

    def A_hat(self) -> dict[int, float]:
        return {k: e.A_hat for k, e in self.nodes.items()}

    def loss(self) -> dict[int, float]:
        return {k: e.loss_hat for k, e in self.links.items()}

    def flags(self, k: int) -> frozenset:
        return self.nodes[k].flags | self.links[k].flags

    def flag_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for k in self.nodes:
            for f in self.flags(k):
                out[f] = out.get(f, 0) + 1
        return dict(sorted(out.items()))

    def to_dict(self) -> dict:
        return {
            "nodes": {
                str(k): {
                    "A_hat": e.A_hat,
                    "method": e.method.tag,
                    "flags": sorted(e.flags),
                }
                for k, e in self.nodes.items()
            },
            "links": {
                str(k): {"alpha_hat": e.alpha_hat, "loss_hat": e.loss_hat, "flags": sorted(e.flags)}
                for k, e in self.links.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "link", "method", "A_hat", "alpha_hat", "loss_hat", "flags"])
        for k, e in self.nodes.items():
            link = self.links[k]
            w.writerow([
                k, k, e.method.tag, repr(e.A_hat), repr(link.alpha_hat),
                repr(link.loss_hat), "|".join(sorted(self.flags(k))),
            ])
        return buf.getvalue()


def estimate_tree(data, topo: Topology, policy=OMLE) -> EstimateReport:
    """Estimate every path and link pass rate of ``topo``.

    ``data`` is an observation matrix or anything with the stats interface.
    ``policy`` is a single :class:`EstimatorSpec` for every internal node, a
    mapping from node to spec (unlisted nodes use OMLE), or a callable
    ``policy(stats, topo, k) -> EstimatorSpec``.  Receivers use
    ``A_hat = gamma_hat``.  Nodes whose counts admit no estimate fall back to
    ``gamma_hat`` with the ``degenerate_counts`` flag.
    """
    stats = build_stats(data, topo) if isinstance(data, ObservationMatrix) else data
    nodes: dict[int, NodeEstimate] = {}
    for k in topo.preorder()[1:]:
        if topo.is_leaf(k):
            nodes[k] = NodeEstimate(k, stats.gamma(k), DIRECT)
            continue
        if isinstance(policy, EstimatorSpec):
            spec = policy
        elif isinstance(policy, Mapping):
            spec = policy.get(k, OMLE)
        else:
            spec = policy(stats, topo, k)
        try:
            nodes[k] = estimate_node(stats, topo, k, spec)
        except DegenerateCountsError as exc:
            nodes[k] = NodeEstimate(
                k, stats.gamma(k), spec, frozenset({"degenerate_counts"}), {"error": str(exc)}
            )
    links = links_from_paths(topo, {k: e.A_hat for k, e in nodes.items()})
    return EstimateReport(nodes, links)
