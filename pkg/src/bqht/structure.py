"""Pooling structure of a service system at the heavy-traffic limit.

The residual matching splits into connected components; within one, classes
and servers pool completely and scaled waits equalize.  Components with
servers are related by a directed acyclic graph: an arc k1 -> k2 means some
class of k1 can off-load work onto a server of k2, so k2 empties first and
must precede k1 in any ranking.  Classes with vanishing arrivals form
server-less singleton components that ride along the graph via the position
of the last ranked component they can reach.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations
from typing import Iterator, Optional

from .errors import CycleDetected, InadmissibleInstance
from .flows import residual_matching
from .model import Instance, Menu


@dataclass(frozen=True)
class CrpComponent:
    classes: frozenset
    servers: frozenset
    Lambda_tilde: Fraction
    gamma_tilde: Fraction
    mu_tilde: Fraction

    @property
    def serverless(self) -> bool:
        return not self.servers


@dataclass(frozen=True)
class CrpDag:
    components: tuple
    arcs: frozenset  # (donor, recipient) pairs over component indices

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def Kprime(self) -> int:
        return self.K - len(self.I0)

    @property
    def I0(self) -> frozenset:
        return frozenset(k for k, c in enumerate(self.components) if c.serverless)

    def successors(self, k: int) -> frozenset:
        return frozenset(b for a, b in self.arcs if a == k)

    def reachable_from(self, k: int) -> frozenset:
        seen = set()
        stack = [k]
        while stack:
            u = stack.pop()
            for v in self.successors(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return frozenset(seen)

    def edge_list(self) -> list:
        return sorted([a, b] for a, b in self.arcs)


@dataclass(frozen=True)
class TopologicalOrder:
    """A ranking sigma of the server-ful components: recipients precede their
    donors, and earlier positions wait longer."""

    sigma: tuple  # component indices, length K'
    comps_map: tuple  # per position: {sigma[pos]} plus attached server-less comps
    gamma_comps: tuple  # per position: aggregated slack of comps_map entry

    def position_of(self, k: int) -> int:
        for pos, group in enumerate(self.comps_map):
            if k in group:
                return pos
        raise KeyError(f"component {k} not covered by this order")


def crp_components(residual: Menu, instance: Instance) -> list:
    """Connected components of the residual matching, as sorted lists:
    components with servers first (by smallest class index), then server-less
    singletons (classes with zero limiting arrivals, by class index)."""
    n, m = residual.n, residual.m
    parent = list(range(n + m))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[rx] = ry

    for i, j in residual.arcs():
        union(i, n + j)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), [set(), set()])[0].add(i)
    for j in range(m):
        groups.setdefault(find(n + j), [set(), set()])[1].add(j)

    def build(classes, servers):
        return CrpComponent(
            frozenset(classes),
            frozenset(servers),
            sum((instance.path.Lambda[i] for i in classes), Fraction(0)),
            sum((instance.path.gamma[i] for i in classes), Fraction(0)),
            sum((instance.rates.mu[j] for j in servers), Fraction(0)),
        )

    comps = [build(c, s) for c, s in groups.values()]
    serverful = sorted((c for c in comps if not c.serverless), key=lambda c: min(c.classes))
    serverless = sorted((c for c in comps if c.serverless), key=lambda c: min(c.classes))
    for c in serverful:
        # aggregate demand must exactly match aggregate capacity inside a component
        assert c.Lambda_tilde == c.mu_tilde, (c.Lambda_tilde, c.mu_tilde)
    return serverful + serverless


def build_dag(menu: Menu, components: list) -> CrpDag:
    """Directed arcs between components induced by the original menu: donor
    k1 -> recipient k2 when a class of k1 is compatible with a server of k2."""
    comp_of_class = {}
    comp_of_server = {}
    for k, comp in enumerate(components):
        for i in comp.classes:
            comp_of_class[i] = k
        for j in comp.servers:
            comp_of_server[j] = k
    arcs = set()
    for i, j in menu.arcs():
        k1, k2 = comp_of_class[i], comp_of_server[j]
        if k1 != k2:
            arcs.add((k1, k2))

    dag = CrpDag(tuple(components), frozenset(arcs))
    for k in dag.I0:
        if not dag.successors(k):
            classes = "{" + ", ".join(str(i + 1) for i in components[k].classes) + "}"
            raise InadmissibleInstance(
                f"class subset {classes} has no compatible servers at all"
            )
    _assert_acyclic(dag)
    return dag


def _assert_acyclic(dag: CrpDag):
    state = [0] * dag.K  # 0 unvisited, 1 on stack, 2 done
    def visit(u, trail):
        state[u] = 1
        trail.append(u)
        for v in sorted(dag.successors(u)):
            if state[v] == 1:
                cycle = trail[trail.index(v):] + [v]
                raise CycleDetected(
                    "component graph has a cycle: " + " -> ".join(str(x) for x in cycle)
                )
            if state[v] == 0:
                visit(v, trail)
        trail.pop()
        state[u] = 2

    for u in range(dag.K):
        if state[u] == 0:
            visit(u, [])


def decompose(instance: Instance, order_seed: Optional[int] = None):
    """Full pipeline: residual matching -> components -> component graph."""
    residual = residual_matching(instance, order_seed)
    components = crp_components(residual, instance)
    return residual, components, build_dag(instance.menu, components)


def topological_orders(dag: CrpDag) -> list:
    """All rankings of the server-ful components consistent with the graph
    (every recipient placed before its donors), in lexicographic order, each
    carrying the attachment map for server-less components."""
    serverful = [k for k in range(dag.K) if not dag.components[k].serverless]
    succ = {k: frozenset(s for s in dag.successors(k) if s in set(serverful)) for k in serverful}
    orders = []
    sigma = []
    placed = set()

    def extend():
        if len(sigma) == len(serverful):
            orders.append(tuple(sigma))
            return
        for k in serverful:
            if k not in placed and succ[k] <= placed:
                placed.add(k)
                sigma.append(k)
                extend()
                sigma.pop()
                placed.remove(k)

    extend()
    reach = {kappa: dag.reachable_from(kappa) for kappa in dag.I0}
    out = []
    for sig in orders:
        pos = {k: t for t, k in enumerate(sig)}
        groups = [{k} for k in sig]
        for kappa in sorted(dag.I0):
            last = max(pos[k] for k in reach[kappa] if k in pos)
            groups[last].add(kappa)
        gamma_comps = tuple(
            sum((dag.components[k].gamma_tilde for k in group), Fraction(0))
            for group in groups
        )
        out.append(TopologicalOrder(sig, tuple(frozenset(g) for g in groups), gamma_comps))
    return out


def induced_server_count(order: TopologicalOrder, components: tuple) -> int:
    count = 1
    for k in order.sigma:
        for size in range(2, len(components[k].servers) + 1):
            count *= size
    return count


def induced_server_permutations(order: TopologicalOrder, components: tuple) -> Iterator[tuple]:
    """All server orderings obtained by permuting servers within each ranked
    component and concatenating along the ranking."""
    blocks = [sorted(components[k].servers) for k in order.sigma]

    def stream(idx):
        if idx == len(blocks):
            yield ()
            return
        for perm in permutations(blocks[idx]):
            for rest in stream(idx + 1):
                yield perm + rest

    return stream(0)
