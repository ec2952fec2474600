"""Receiver-side counts: union counts ``n_k(x)`` and intersection counts ``I_k(x)``.

For every node ``j`` the probes seen by at least one receiver below ``j`` are
stored once as a bit vector over probes.  Any ``n_k(x)`` is then a popcount
of ORed vectors and any ``I_k(x)`` a popcount of ANDed ones.
"""

from __future__ import annotations

import itertools
import json
import math
from functools import reduce
from typing import Iterable

import numpy as np

from .errors import EnumerationCapError, ObservationError
from .simulator import ObservationMatrix
from .topology import LinkParams, Topology

DEFAULT_CAP = 2**16


def canonical_subset(topo: Topology, k: int, x: Iterable[int]) -> tuple[int, ...]:
    """Validate ``x`` as a non-empty subset of ``d_k`` and sort it in children order."""
    children = topo.children(k)
    members = tuple(x)
    if not members:
        raise ValueError("subset must be non-empty")
    if len(set(members)) != len(members):
        raise ValueError(f"duplicate members in {members}")
    pos = {c: i for i, c in enumerate(children)}
    bad = [j for j in members if j not in pos]
    if bad:
        raise ValueError(f"{bad} are not children of node {k}")
    return tuple(sorted(members, key=pos.__getitem__))


def enumerate_subsets(topo: Topology, k: int, i: int, cap: int = DEFAULT_CAP) -> list[tuple[int, ...]]:
    """All size-``i`` subsets of ``d_k`` in lexicographic children order."""
    children = topo.children(k)
    if not 1 <= i <= len(children):
        raise ValueError(f"degree {i} out of range for node {k} with {len(children)} children")
    total = math.comb(len(children), i)
    if total > cap:
        raise EnumerationCapError(
            f"node {k}: C({len(children)}, {i}) = {total} subsets exceeds cap {cap}"
        )
    return list(itertools.combinations(children, i))


def _popcount(vec: np.ndarray) -> int:
    return int(np.bitwise_count(vec).sum(dtype=np.int64))


class StatsTable:
    """Counts derived from one observation matrix.

    ``gamma_hat[k] = n_k(d_k) / n`` for internal nodes and ``n_j(j) / n`` for
    receivers.  Node 0 mirrors node 1.  Subset counts are computed lazily and
    cached; the cache only ever gains entries, so concurrent readers are safe.
    """

    def __init__(self, topo: Topology, n: int, hits: list[np.ndarray]):
        self.topology = topo
        self.n = n
        self._hits = hits
        self.counts = np.array([_popcount(h) for h in hits], dtype=np.int64)
        self.gamma_hat = self.counts / n if n else np.zeros(len(hits))
        self.gamma_hat.setflags(write=False)
        self.counts.setflags(write=False)
        self._I: dict[tuple[int, tuple[int, ...]], int] = {}
        self._nk: dict[tuple[int, tuple[int, ...]], int] = {}

    def subtree_hits(self, j: int) -> np.ndarray:
        """Boolean vector ``u_j`` over probes: seen by some receiver under ``j``."""
        return np.unpackbits(self._hits[j], count=self.n, bitorder="little").astype(bool)

    def gamma(self, k: int) -> float:
        return float(self.gamma_hat[k])

    def count_I(self, k: int, x: Iterable[int]) -> int:
        key = (k, canonical_subset(self.topology, k, x))
        got = self._I.get(key)
        if got is None:
            vec = reduce(np.bitwise_and, (self._hits[j] for j in key[1]))
            got = self._I.setdefault(key, _popcount(vec))
        return got

    def count_nk(self, k: int, x: Iterable[int]) -> int:
        key = (k, canonical_subset(self.topology, k, x))
        got = self._nk.get(key)
        if got is None:
            vec = reduce(np.bitwise_or, (self._hits[j] for j in key[1]))
            got = self._nk.setdefault(key, _popcount(vec))
        return got

    def inter_frac(self, k: int, x: Iterable[int]) -> float:
        return self.count_I(k, x) / self.n

    def union_frac(self, k: int, x: Iterable[int]) -> float:
        return self.count_nk(k, x) / self.n

    def to_dict(self, max_children: int = 6) -> dict:
        """Debug dump: per-node ``gamma_hat`` plus every ``I_k(x)`` for small nodes."""
        nodes = {}
        topo = self.topology
        for k in topo.preorder()[1:]:
            entry = {"count": int(self.counts[k]), "gamma_hat": float(self.gamma_hat[k])}
            cs = topo.children(k)
            if cs and len(cs) <= max_children:
                entry["I"] = {
                    ",".join(map(str, x)): self.count_I(k, x)
                    for i in range(1, len(cs) + 1)
                    for x in itertools.combinations(cs, i)
                }
            nodes[str(k)] = entry
        return {"n": self.n, "nodes": nodes}

    def to_json(self, max_children: int = 6) -> str:
        return json.dumps(self.to_dict(max_children), indent=1)


def build_stats(obs: ObservationMatrix, topo: Topology) -> StatsTable:
    if tuple(sorted(obs.receivers)) != topo.receivers:
        raise ObservationError(
            f"observation receivers {obs.receivers} do not match topology receivers {topo.receivers}"
        )
    hits: list[np.ndarray] = [None] * topo.n_nodes
    for k in topo.postorder():
        cs = topo.children(k)
        if cs:
            hits[k] = reduce(np.bitwise_or, (hits[j] for j in cs))
        else:
            hits[k] = np.packbits(obs.column(k), bitorder="little")
    return StatsTable(topo, obs.n, hits)


def count_I(stats: StatsTable, k: int, x: Iterable[int]) -> int:
    return stats.count_I(k, x)


def count_nk(stats: StatsTable, k: int, x: Iterable[int]) -> int:
    return stats.count_nk(k, x)


def inclusion_exclusion_check(stats: StatsTable, k: int, cap: int = DEFAULT_CAP) -> int:
    """``n_k(d_k)`` minus its alternating-sum decomposition over ``I_k(x)``; always 0."""
    topo = stats.topology
    cs = topo.children(k)
    if not cs:
        raise ValueError(f"node {k} is a receiver")
    total = 0
    for i in range(1, len(cs) + 1):
        sign = 1 if i % 2 else -1
        total += sign * sum(stats.count_I(k, x) for x in enumerate_subsets(topo, k, i, cap))
    return stats.count_nk(k, cs) - total


class ExpectedStats:
    """Per-probe expectations of the same quantities a :class:`StatsTable` exposes.

    Feeding these to an estimator must return the true path rate, which makes
    them the fixed point used to check every estimator family.
    """

    def __init__(self, params: LinkParams):
        self.topology = params.topology
        self.params = params
        self.gamma_hat = params.gamma
        self.n = None

    def gamma(self, k: int) -> float:
        return float(self.params.gamma[k])

    def inter_frac(self, k: int, x: Iterable[int]) -> float:
        x = canonical_subset(self.topology, k, x)
        A = self.params.A[k]
        return float(A * np.prod([self.params.gamma[j] / A for j in x]))

    def union_frac(self, k: int, x: Iterable[int]) -> float:
        x = canonical_subset(self.topology, k, x)
        A = self.params.A[k]
        return float(A * (1.0 - np.prod([1.0 - self.params.gamma[j] / A for j in x])))
