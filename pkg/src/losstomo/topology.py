"""Multicast trees, link/path pass rates and the topology file format.

Node 0 is the source attachment point and has exactly one child, node 1, so
link ``e_1`` is the root link.  Every other node ``k`` is joined to its parent
``f(k)`` by link ``e_k``.  Leaves are the receivers.

The text format has one line per non-root node::

    # child parent [alpha]
    1 0 0.99
    2 1 0.95
    3 1 0.95

A JSON document ``{"nodes": [{"id": 1, "parent": 0, "alpha": 0.99}, ...]}`` is
accepted as well; :func:`load_topology` picks the format from the first
non-whitespace character.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CycleError,
    DisconnectedError,
    MultipleParentsError,
    ParameterError,
    RootDegreeError,
    TopologySyntaxError,
    TopologyValidationError,
    UnidentifiableChainError,
)

ROOT = 0


class Topology:
    """An immutable, validated multicast tree.

    Build one with :meth:`from_edges` or :func:`parse_topology`.  Children keep
    the order in which their links were declared; subset enumeration relies on
    that order being stable.
    """

    __slots__ = ("_parent", "_children", "_receivers", "_subtree_receivers", "_preorder")

    def __init__(self, parent: Sequence[int], children: Sequence[Sequence[int]]):
        self._parent = tuple(int(p) for p in parent)
        self._children = tuple(tuple(int(c) for c in cs) for cs in children)
        self._validate()
        self._preorder = self._compute_preorder()
        self._receivers = tuple(k for k in range(self.n_nodes) if not self._children[k])
        subtree: list[frozenset[int]] = [frozenset()] * self.n_nodes
        for k in reversed(self._preorder):
            if self._children[k]:
                subtree[k] = frozenset().union(*(subtree[j] for j in self._children[k]))
            else:
                subtree[k] = frozenset((k,))
        self._subtree_receivers = tuple(subtree)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]]) -> "Topology":
        """Build a tree from ``(child, parent)`` pairs, in declaration order."""
        edges = [(int(c), int(p)) for c, p in edges]
        ids = {ROOT}
        for c, p in edges:
            ids.update((c, p))
        if min(ids) < 0:
            raise TopologyValidationError("node ids must be non-negative")
        m = max(ids)
        missing = sorted(set(range(m + 1)) - ids)
        if missing:
            raise TopologyValidationError(f"node ids must be dense 0..{m}; missing {missing}")

        parent = [-1] * (m + 1)
        children: list[list[int]] = [[] for _ in range(m + 1)]
        for c, p in edges:
            if c == ROOT:
                raise MultipleParentsError("node 0 is the root and cannot have a parent")
            if parent[c] != -1:
                raise MultipleParentsError(f"node {c} has more than one parent ({parent[c]} and {p})")
            parent[c] = p
            children[p].append(c)
        return cls(parent, children)

    def _validate(self):
        n = len(self._parent)
        if len(self._children) != n:
            raise TopologyValidationError("parent and children tables differ in length")
        for k in range(1, n):
            if self._parent[k] == -1:
                raise DisconnectedError(f"node {k} has no parent")
        # every node must reach the root by following parents
        for k in range(1, n):
            seen = set()
            j = k
            while j != ROOT:
                if j in seen:
                    raise CycleError(f"cycle through node {k}")
                seen.add(j)
                j = self._parent[j]
                if j == -1:
                    raise DisconnectedError(f"node {k} is not connected to the root")
        if len(self._children[ROOT]) != 1:
            raise RootDegreeError(
                f"root must have exactly one child, found {len(self._children[ROOT])}"
            )
        for k in range(1, n):
            if len(self._children[k]) == 1:
                raise UnidentifiableChainError(
                    f"unidentifiable chain: internal node {k} has a single child"
                )

    def _compute_preorder(self) -> tuple[int, ...]:
        order = []
        stack = [ROOT]
        while stack:
            k = stack.pop()
            order.append(k)
            stack.extend(reversed(self._children[k]))
        return tuple(order)

    @property
    def n_nodes(self) -> int:
        return len(self._parent)

    @property
    def n_links(self) -> int:
        return len(self._parent) - 1

    @property
    def receivers(self) -> tuple[int, ...]:
        """Leaf nodes in ascending id order."""
        return self._receivers

    def parent(self, k: int) -> int:
        if k == ROOT:
            raise KeyError("node 0 has no parent")
        return self._parent[k]

    def children(self, k: int) -> tuple[int, ...]:
        return self._children[k]

    def subtree_receivers(self, k: int) -> frozenset[int]:
        return self._subtree_receivers[k]

    def is_leaf(self, k: int) -> bool:
        return not self._children[k]

    def preorder(self) -> tuple[int, ...]:
        return self._preorder

    def postorder(self) -> tuple[int, ...]:
        """Children before parents (reverse pre-order)."""
        return tuple(reversed(self._preorder))

    def internal_nodes(self) -> tuple[int, ...]:
        """Non-root nodes with descendants, in pre-order."""
        return tuple(k for k in self._preorder if k != ROOT and self._children[k])

    def edges(self) -> list[tuple[int, int]]:
        """``(child, parent)`` pairs in pre-order."""
        return [(k, self._parent[k]) for k in self._preorder if k != ROOT]

    def depth(self) -> int:
        best = 0
        depth = [0] * self.n_nodes
        for k in self._preorder[1:]:
            depth[k] = depth[self._parent[k]] + 1
            best = max(best, depth[k])
        return best

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return self._parent == other._parent and self._children == other._children

    def __hash__(self):
        return hash((self._parent, self._children))

    def __repr__(self):
        return f"Topology(n_nodes={self.n_nodes}, receivers={len(self._receivers)})"


def complete_tree(branching: int, depth: int) -> Topology:
    """Root link followed by a complete ``branching``-ary tree of ``depth`` levels.

    ``complete_tree(2, 3)`` is the 16-node binary tree with receivers 8..15.
    """
    edges = [(1, 0)]
    frontier = [1]
    nxt = 2
    for _ in range(depth):
        new = []
        for p in frontier:
            for _ in range(branching):
                edges.append((nxt, p))
                new.append(nxt)
                nxt += 1
        frontier = new
    return Topology.from_edges(edges)


def star_tree(n_children: int) -> Topology:
    """Root link ``0 -> 1`` with ``n_children`` receivers hanging off node 1."""
    return Topology.from_edges([(1, 0)] + [(j, 1) for j in range(2, n_children + 2)])


# ---------------------------------------------------------------------------
# pass rates


@dataclass(frozen=True)
class LinkParams:
    """True link pass rates and the path/subtree rates they imply.

    All four arrays are indexed by node id.  ``alpha[0]`` is 1 by convention.
    """

    topology: Topology = field(repr=False)
    alpha: np.ndarray
    A: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def loss(self) -> np.ndarray:
        return 1.0 - self.alpha


def _alpha_array(topo: Topology, alpha) -> np.ndarray:
    out = np.full(topo.n_nodes, np.nan)
    out[0] = 1.0
    if isinstance(alpha, Mapping):
        for k, v in alpha.items():
            out[int(k)] = float(v)
    else:
        arr = np.asarray(alpha, dtype=float)
        if arr.shape == (topo.n_nodes,):
            out[1:] = arr[1:]
        elif arr.shape == (topo.n_links,):
            out[1:] = arr
        else:
            raise ParameterError(
                f"alpha must have {topo.n_links} or {topo.n_nodes} entries, got {arr.shape}"
            )
    return out


def derive_params(topo: Topology, alpha, *, strict: bool = True) -> LinkParams:
    """Compute path rates ``A``, subtree rates ``beta`` and ``gamma = A * beta``.

    With ``strict=False`` link pass rates of exactly 0 are accepted; this is
    only useful to the simulator (a dead link) since the estimators need
    ``alpha > 0`` everywhere.
    """
    a = _alpha_array(topo, alpha)
    missing = [k for k in range(1, topo.n_nodes) if np.isnan(a[k])]
    if missing:
        raise ParameterError(f"missing alpha for nodes {missing}")
    lo_ok = (a[1:] >= 0.0) if not strict else (a[1:] > 0.0)
    if not np.all(lo_ok & (a[1:] <= 1.0)):
        bad = [k for k in range(1, topo.n_nodes) if not (0.0 < a[k] <= 1.0)]
        raise ParameterError(f"alpha outside (0, 1] for nodes {bad}")

    A = np.ones(topo.n_nodes)
    for k in topo.preorder()[1:]:
        A[k] = A[topo.parent(k)] * a[k]

    beta = np.ones(topo.n_nodes)
    for k in topo.postorder():
        cs = topo.children(k)
        if cs:
            miss = 1.0
            for j in cs:
                miss *= 1.0 - a[j] * beta[j]
            beta[k] = 1.0 - miss

    gamma = A * beta
    for arr in (a, A, beta, gamma):
        arr.setflags(write=False)
    return LinkParams(topo, a, A, beta, gamma)


@dataclass(frozen=True)
class LinkEstimate:
    alpha_hat: float
    loss_hat: float
    flags: frozenset = frozenset()


def links_from_paths(topo: Topology, A_hat: Mapping[int, float]) -> dict[int, LinkEstimate]:
    """Turn path pass-rate estimates into link pass-rate and loss estimates.

    ``alpha_hat[k] = A_hat[k] / A_hat[f(k)]`` with ``A_hat[0] = 1``.  Ratios
    above 1 (possible with noisy estimates) are clamped to 1 and flagged
    ``clamped_high``.  A zero parent estimate leaves the ratio undefined; such
    links get ``nan`` and the ``undefined`` flag.
    """
    path = dict(A_hat)
    path.setdefault(ROOT, 1.0)
    out = {}
    for k in topo.preorder()[1:]:
        if k not in path:
            continue
        p = topo.parent(k)
        if p not in path:
            raise ParameterError(f"no path estimate for node {p}, parent of {k}")
        num, den = float(path[k]), float(path[p])
        if den <= 0.0:
            out[k] = LinkEstimate(float("nan"), float("nan"), frozenset({"undefined"}))
            continue
        ratio = num / den
        flags = frozenset()
        if ratio > 1.0:
            ratio = 1.0
            flags = frozenset({"clamped_high"})
        out[k] = LinkEstimate(ratio, 1.0 - ratio, flags)
    return out


# ---------------------------------------------------------------------------
# file format


def _parse_text(text: str) -> tuple[list[tuple[int, int]], dict[int, float]]:
    edges = []
    alpha = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) not in (2, 3):
            raise TopologySyntaxError(
                f"expected 'child parent [alpha]', got {raw.strip()!r}", lineno
            )
        try:
            child, parent = int(parts[0]), int(parts[1])
        except ValueError:
            raise TopologySyntaxError(f"node ids must be integers: {raw.strip()!r}", lineno) from None
        if len(parts) == 3:
            try:
                alpha[child] = float(parts[2])
            except ValueError:
                raise TopologySyntaxError(f"bad alpha value {parts[2]!r}", lineno) from None
        edges.append((child, parent))
    return edges, alpha


def _parse_json(text: str) -> tuple[list[tuple[int, int]], dict[int, float]]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologySyntaxError(exc.msg, exc.lineno) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list):
        raise TopologySyntaxError("JSON topology needs a top-level 'nodes' list")
    edges = []
    alpha = {}
    for entry in doc["nodes"]:
        if not isinstance(entry, dict) or "id" not in entry:
            raise TopologySyntaxError(f"bad node entry {entry!r}")
        if entry.get("parent") is None:
            if int(entry["id"]) != ROOT:
                raise TopologySyntaxError(f"node {entry['id']} has no parent")
            continue
        child = int(entry["id"])
        edges.append((child, int(entry["parent"])))
        if entry.get("alpha") is not None:
            alpha[child] = float(entry["alpha"])
    return edges, alpha


def load_topology(text: str) -> tuple[Topology, dict[int, float] | None]:
    """Parse a topology file and return the tree with any link pass rates it carries.

    The second element is ``None`` when no line specifies an alpha.
    """
    stripped = text.lstrip()
    if stripped.startswith("{"):
        edges, alpha = _parse_json(text)
    else:
        edges, alpha = _parse_text(text)
    if not edges:
        raise TopologySyntaxError("topology has no links")
    topo = Topology.from_edges(edges)
    return topo, (alpha or None)


def parse_topology(text: str) -> Topology:
    return load_topology(text)[0]


def read_topology(path) -> tuple[Topology, dict[int, float] | None]:
    with open(path, encoding="utf-8") as fh:
        return load_topology(fh.read())


def serialize_topology(topo: Topology, alpha=None, *, fmt: str = "text") -> str:
    """Write ``topo`` (and optionally its link pass rates) back out.

    Links are emitted grouped by parent in child order, which is what
    :func:`parse_topology` needs to restore the same children ordering.
    """
    a = None if alpha is None else _alpha_array(topo, alpha)
    edges = topo.edges()
    if fmt == "json":
        nodes = [{"id": 0, "parent": None}]
        for c, p in edges:
            entry = {"id": c, "parent": p}
            if a is not None:
                entry["alpha"] = float(a[c])
            nodes.append(entry)
        return json.dumps({"nodes": nodes}, indent=1) + "\n"
    lines = []
    for c, p in edges:
        if a is None:
            lines.append(f"{c} {p}")
        else:
            lines.append(f"{c} {p} {float(a[c])!r}")
    return "\n".join(lines) + "\n"
