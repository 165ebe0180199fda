"""Scaled steady-state waiting times in the heavy-traffic limit.

Each ranking sigma of the pooled components gets an unnormalized weight
Q(sigma), the product over prefix positions of 1 / (aggregated slack of the
prefix).  A component's scaled wait conditional on sigma is the tail sum of
those reciprocals starting at its position, and its unconditional wait is
the Q-weighted mixture over all rankings.

Arithmetic is exact-rational by default, so identities like "the wait of a
class equals 1 / (sum of slacks)" hold literally, not within a tolerance.
For deep graphs (many ranked components) the weight products can under- or
overflow doubles, so a float mode accumulates log Q and normalizes by
max-log subtraction; mixtures are clamped to their convex hull to keep the
convexity invariant under rounding.  Prefix positivity is always decided
on the exact rationals regardless of mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .errors import PrefixSlackViolation, SolverFailure
from .model import Instance
from .structure import TopologicalOrder, decompose, topological_orders

# beyond this many ranked components, rational weight sums get unwieldy
EXACT_MODE_CAP = 16


@dataclass(frozen=True)
class PrefixCheck:
    ok: bool
    order: Optional[TopologicalOrder] = None
    position: Optional[int] = None

    def __bool__(self):
        return self.ok


def _prefix_sums(order: TopologicalOrder) -> list:
    total = Fraction(0)
    out = []
    for g in order.gamma_comps:
        total += g
        out.append(total)
    return out


def check_prefix_slacks(orders) -> PrefixCheck:
    """Every prefix of aggregated slacks must be strictly positive, for every
    ranking; otherwise the mixture weights and waits are undefined."""
    for order in orders:
        for kappa, total in enumerate(_prefix_sums(order)):
            if total <= 0:
                return PrefixCheck(False, order, kappa)
    return PrefixCheck(True)


def _checked_prefixes(order: TopologicalOrder) -> list:
    prefixes = _prefix_sums(order)
    for kappa, total in enumerate(prefixes):
        if total <= 0:
            raise PrefixSlackViolation(
                f"prefix slack through position {kappa + 1} of ranking "
                f"{tuple(k + 1 for k in order.sigma)} is {total} <= 0",
                sigma=order.sigma,
                kappa=kappa,
            )
    return prefixes


def order_weight(order: TopologicalOrder) -> Fraction:
    """Unnormalized probability weight Q of one ranking."""
    weight = Fraction(1)
    for total in _checked_prefixes(order):
        weight /= total
    return weight


def conditional_wait(order: TopologicalOrder, k: int):
    """Scaled wait of component k given the ranking: tail sum of reciprocal
    prefix slacks from k's position onward."""
    prefixes = _checked_prefixes(order)
    pos = order.position_of(k)
    return sum((1 / total for total in prefixes[pos:]), Fraction(0))


def conditional_average_wait(order: TopologicalOrder, mu_tilde) -> Fraction:
    """Class-average scaled wait given the ranking: position kappa holds the
    first kappa components' combined work over the prefix slack."""
    prefixes = _checked_prefixes(order)
    served = Fraction(0)
    total = Fraction(0)
    for kappa, k in enumerate(order.sigma):
        served += mu_tilde[k]
        total += served / prefixes[kappa]
    return total


@dataclass(frozen=True)
class WaitReport:
    orders: tuple
    Q_raw: tuple  # unnormalized ranking weights (None entries in float mode)
    Q_norm: tuple
    conditional: dict  # (order position in `orders`, component) -> wait
    component_wait: dict  # component index -> mixture wait
    class_wait: dict  # class index -> wait of its component
    system_average: object  # demand-weighted average over classes

    @property
    def mode(self) -> str:
        return "exact" if isinstance(self.system_average, Fraction) else "float"


def component_waits(orders, components, mode: str = "auto") -> WaitReport:
    """Mixture waits over all rankings, per component and per class, plus the
    demand-weighted system average."""
    if not orders:
        raise SolverFailure("no rankings to mix over")
    if mode not in ("auto", "exact", "float"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "auto":
        mode = "exact" if len(orders[0].sigma) <= EXACT_MODE_CAP else "float"
    K = len(components)
    per_order_prefixes = [_checked_prefixes(order) for order in orders]

    if mode == "exact":
        Q_raw = []
        for prefixes in per_order_prefixes:
            q = Fraction(1)
            for total in prefixes:
                q /= total
            Q_raw.append(q)
        q_sum = sum(Q_raw, Fraction(0))
        Q_norm = [q / q_sum for q in Q_raw]
        one = Fraction(1)
    else:
        logs = [
            -sum(math.log(float(total)) for total in prefixes)
            for prefixes in per_order_prefixes
        ]
        peak = max(logs)
        unnorm = [math.exp(lg - peak) for lg in logs]
        norm = sum(unnorm)
        Q_norm = [u / norm for u in unnorm]
        Q_raw = [None] * len(orders)
        one = 1.0

    conditional = {}
    for t, (order, prefixes) in enumerate(zip(orders, per_order_prefixes)):
        if mode == "float":
            prefixes = [float(p) for p in prefixes]
        tail = [one * 0] * (len(prefixes) + 1)
        for kappa in range(len(prefixes) - 1, -1, -1):
            tail[kappa] = tail[kappa + 1] + one / prefixes[kappa]
        for pos, group in enumerate(order.comps_map):
            for k in group:
                conditional[(t, k)] = tail[pos]

    component_wait = {}
    for k in range(K):
        values = [conditional[(t, k)] for t in range(len(orders))]
        mixed = sum(q * w for q, w in zip(Q_norm, values))
        if mode == "float":
            mixed = min(max(mixed, min(values)), max(values))
        component_wait[k] = mixed

    class_wait = {}
    for k, comp in enumerate(components):
        for i in comp.classes:
            class_wait[i] = component_wait[k]

    total_mu = sum((c.mu_tilde for c in components), Fraction(0))
    total_demand_wait = sum(
        (comp.Lambda_tilde if mode == "exact" else float(comp.Lambda_tilde))
        * component_wait[k]
        for k, comp in enumerate(components)
    )
    system_average = total_demand_wait / (
        total_mu if mode == "exact" else float(total_mu)
    )
    return WaitReport(
        tuple(orders),
        tuple(Q_raw),
        tuple(Q_norm),
        conditional,
        component_wait,
        class_wait,
        system_average,
    )


def average_wait(orders, mu_tilde) -> Fraction:
    """System-average scaled wait straight from the ranking mixture (an
    independent route to WaitReport.system_average)."""
    if not orders:
        raise SolverFailure("no rankings to mix over")
    Q_raw = [order_weight(order) for order in orders]
    q_sum = sum(Q_raw, Fraction(0))
    total_mu = sum(mu_tilde, Fraction(0))
    mixed = sum(
        (q / q_sum) * conditional_average_wait(order, mu_tilde)
        for q, order in zip(Q_raw, orders)
    )
    return mixed / total_mu


@dataclass(frozen=True)
class MinWaitBound:
    value: Fraction
    attainers: tuple  # component indices whose wait equals the bound

    @property
    def attained(self) -> bool:
        return bool(self.attainers)


def min_wait_bound(instance: Instance) -> MinWaitBound:
    """Universal lower bound 1/|gamma| on every scaled wait.  A component
    attains it iff it sits in the last ranked group of every ranking (the
    sink that all work can reach)."""
    _, components, dag = decompose(instance)
    orders = topological_orders(dag)
    last = len(orders[0].sigma) - 1
    attainers = [
        k
        for k in range(len(components))
        if all(order.position_of(k) == last for order in orders)
    ]
    return MinWaitBound(1 / instance.path.total_gamma, tuple(attainers))
