"""Limiting-flow computation and the residual matching.

At the heavy-traffic limit the demand vector Lambda must be routed through
the menu to the servers at full capacity.  A menu arc survives into the
residual matching iff some feasible routing puts strictly positive flow on
it; equivalently, the computed max flow uses it, or the residual graph of
that max flow can reroute a positive amount around it.  All capacities are
exact rationals so "zero flow" is decided exactly, never by tolerance.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .errors import ArcNotInMenu, Infeasible
from .model import Instance, Menu


@dataclass(frozen=True)
class Flow:
    """Nonnegative class-by-server routing supported on menu arcs."""

    entries: tuple

    def __getitem__(self, arc):
        i, j = arc
        return self.entries[i][j]

    @property
    def value(self) -> Fraction:
        return sum((f for row in self.entries for f in row), Fraction(0))

    def class_totals(self) -> tuple:
        return tuple(sum(row, Fraction(0)) for row in self.entries)

    def server_totals(self) -> tuple:
        m = len(self.entries[0])
        return tuple(sum((row[j] for row in self.entries), Fraction(0)) for j in range(m))


class _MaxFlowNetwork:
    """Edmonds-Karp on the source -> classes -> servers -> sink network."""

    def __init__(self, instance: Instance, order_seed: Optional[int] = None):
        menu = instance.menu
        n, m = menu.n, menu.m
        self.n, self.m = n, m
        self.source = 0
        self.sink = n + m + 1
        self.caps = []  # residual capacity per directed edge
        self.dests = []
        self.adj = [[] for _ in range(n + m + 2)]
        self.menu_edges = {}

        total = sum(instance.path.Lambda, Fraction(0))
        for i in range(n):
            self._add_edge(self.source, 1 + i, instance.path.Lambda[i])
        for i, j in menu.arcs():
            # |Lambda| caps the arc without changing the max flow (stand-in for infinity)
            self.menu_edges[(i, j)] = self._add_edge(1 + i, 1 + n + j, total)
        for j in range(m):
            self._add_edge(1 + n + j, self.sink, instance.rates.mu[j])
        if order_seed is not None:
            rng = random.Random(order_seed)
            for edges in self.adj:
                rng.shuffle(edges)

    def _add_edge(self, u: int, v: int, cap: Fraction) -> int:
        e = len(self.caps)
        self.caps.append(Fraction(cap))
        self.dests.append(v)
        self.adj[u].append(e)
        self.caps.append(Fraction(0))
        self.dests.append(u)
        self.adj[v].append(e + 1)
        return e

    def run(self) -> Fraction:
        value = Fraction(0)
        while True:
            parent_edge = [-1] * len(self.adj)
            parent_edge[self.source] = -2
            queue = deque([self.source])
            while queue and parent_edge[self.sink] == -1:
                u = queue.popleft()
                for e in self.adj[u]:
                    v = self.dests[e]
                    if parent_edge[v] == -1 and self.caps[e] > 0:
                        parent_edge[v] = e
                        queue.append(v)
            if parent_edge[self.sink] == -1:
                return value
            bottleneck = None
            v = self.sink
            while v != self.source:
                e = parent_edge[v]
                bottleneck = self.caps[e] if bottleneck is None else min(bottleneck, self.caps[e])
                v = self.dests[e ^ 1]
            v = self.sink
            while v != self.source:
                e = parent_edge[v]
                self.caps[e] -= bottleneck
                self.caps[e ^ 1] += bottleneck
                v = self.dests[e ^ 1]
            value += bottleneck

    def arc_flow(self, i: int, j: int) -> Fraction:
        return self.caps[self.menu_edges[(i, j)] ^ 1]

    def flow_matrix(self) -> Flow:
        rows = []
        for i in range(self.n):
            rows.append(
                tuple(
                    self.arc_flow(i, j) if (i, j) in self.menu_edges else Fraction(0)
                    for j in range(self.m)
                )
            )
        return Flow(tuple(rows))

    def residual_reach(self, start: int) -> set:
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for e in self.adj[u]:
                v = self.dests[e]
                if v not in seen and self.caps[e] > 0:
                    seen.add(v)
                    queue.append(v)
        return seen


def _solved_network(instance: Instance, order_seed: Optional[int] = None) -> _MaxFlowNetwork:
    net = _MaxFlowNetwork(instance, order_seed)
    value = net.run()
    demand = sum(instance.path.Lambda, Fraction(0))
    if value < demand:
        raise Infeasible(
            f"menu can route only {value} of the limiting demand {demand}"
        )
    return net


def limiting_flow(instance: Instance, order_seed: Optional[int] = None) -> Flow:
    """One feasible routing of the limiting demand Lambda through the menu
    (servers exactly at capacity).  Raises Infeasible if none exists."""
    return _solved_network(instance, order_seed).flow_matrix()


def arc_supports_positive_flow(instance: Instance, i: int, j: int) -> bool:
    """True iff some feasible limiting routing puts positive flow on (i, j)."""
    if not (0 <= i < instance.n and 0 <= j < instance.m) or not instance.menu.rows[i][j]:
        raise ArcNotInMenu(f"({i}, {j}) is not an arc of the menu")
    net = _solved_network(instance)
    if net.arc_flow(i, j) > 0:
        return True
    return 1 + i in net.residual_reach(1 + instance.n + j)


def residual_matching(instance: Instance, order_seed: Optional[int] = None) -> Menu:
    """Sub-menu of arcs that can carry positive flow in some feasible limiting
    routing.  Independent of which max flow was found: an unused arc survives
    iff the residual graph can reroute around it (an augmenting cycle), and
    that test is flow-choice invariant."""
    net = _solved_network(instance, order_seed)
    n, m = instance.n, instance.m
    reach = [net.residual_reach(1 + n + j) for j in range(m)]
    rows = []
    for i in range(n):
        row = []
        for j in range(m):
            keep = instance.menu.rows[i][j] == 1 and (
                net.arc_flow(i, j) > 0 or 1 + i in reach[j]
            )
            row.append(1 if keep else 0)
        rows.append(tuple(row))
    return Menu(tuple(rows))
