"""Exact prelimit steady-state analysis by product-form state enumeration.

At a fixed epsilon > 0 the system is described by which servers are busy,
ranked by how long their customers have been in service, followed by the
idle servers ranked by idle time.  The stationary law of that aggregate
state is an explicit product over prefix slacks (busy part) and reachable
arrival rates (idle part), so for small m every one of the m!*(m+1) states
can be enumerated and exact mean waits computed.  This is the ground truth
the scaled-wait limits from `waits` are validated against: as epsilon
shrinks, eps*W_i approaches the limiting wait and the probability mass
escapes to the all-busy states whose server ranking is induced by a
component ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations, permutations

from .errors import ParseError, StructuralZero, TooLarge, UnstableInstance
from .model import Instance, as_rational, slack, uniquely_served_classes
from .structure import decompose, induced_server_permutations, topological_orders
from .waits import component_waits, order_weight

# state count m!*(m+1) and 2^m mask tables stay tiny up to here
ORACLE_SERVER_CAP = 7


def _require_tractable(instance: Instance):
    if instance.m > ORACLE_SERVER_CAP:
        raise TooLarge(
            f"state enumeration requires m <= {ORACLE_SERVER_CAP} servers, got {instance.m}"
        )


def _resolve_epsilon(instance: Instance, at_epsilon=None) -> Fraction:
    if at_epsilon is not None:
        return as_rational(at_epsilon)
    if instance.epsilon is None:
        raise ParseError("instance has no epsilon; pass one or use with_epsilon")
    return instance.epsilon


def _mask_tables(instance: Instance, eps: Fraction):
    """Per server-subset mask: capacity slack against uniquely served demand
    (busy prefixes) and total arrival rate with a compatible server in the
    subset (idle suffixes).  Exact rationals."""
    n, m = instance.n, instance.m
    lam = instance.lambda_at(eps)
    mu = instance.rates.mu
    rows = [instance.menu.row_mask(i) for i in range(n)]
    size = 1 << m
    mu_sum = [Fraction(0)] * size
    for mask in range(1, size):
        low = mask & -mask
        mu_sum[mask] = mu_sum[mask ^ low] + mu[low.bit_length() - 1]
    delta = [Fraction(0)] * size
    lam_reach = [Fraction(0)] * size
    unique_classes = [()] * size
    for mask in range(size):
        inside = [i for i in range(n) if rows[i] & ~mask == 0]
        delta[mask] = mu_sum[mask] - sum((lam[i] for i in inside), Fraction(0))
        lam_reach[mask] = sum((lam[i] for i in range(n) if rows[i] & mask), Fraction(0))
        unique_classes[mask] = tuple(inside)
    return delta, lam_reach, unique_classes


def _check_permutation(s, m: int) -> tuple:
    s = tuple(int(j) for j in s)
    if sorted(s) != list(range(m)):
        raise ParseError(f"s = {s} is not a permutation of the {m} servers (0-based)")
    return s


def aggregate_state_prob(instance: Instance, s, b: int, at_epsilon=None) -> Fraction:
    """Unnormalized stationary weight of the aggregate state (s, b): servers
    s[0..b-1] busy in service-age order, s[b..m-1] idle in idle-time order.

    Exact rational: product of 1/slack over busy prefixes times 1/(reachable
    arrival rate) over idle suffixes.  Raises StructuralZero when some idle
    suffix is reachable by no arriving class (the state has probability 0)
    and UnstableInstance when a prefix slack is not positive.
    """
    _require_tractable(instance)
    eps = _resolve_epsilon(instance, at_epsilon)
    m = instance.m
    s = _check_permutation(s, m)
    if not 0 <= b <= m:
        raise ParseError(f"busy count b = {b} must lie in 0..{m}")
    value = Fraction(1)
    for ell in range(1, b + 1):
        d = slack(instance, s[:ell], eps)
        if d <= 0:
            raise UnstableInstance(
                f"server subset {{{', '.join(str(j + 1) for j in sorted(s[:ell]))}}} "
                f"has slack {d} <= 0 at epsilon = {eps}"
            )
        value /= d
    lam = instance.lambda_at(eps)
    for ell in range(b, m):
        reach = sum(
            (
                lam[i]
                for i in range(instance.n)
                if any(instance.menu.rows[i][j] for j in s[ell:])
            ),
            Fraction(0),
        )
        if reach == 0:
            raise StructuralZero(
                f"no arriving class can reach idle servers "
                f"{{{', '.join(str(j + 1) for j in s[ell:])}}}; "
                "the state has probability zero"
            )
        value /= reach
    return value


@dataclass(frozen=True)
class OracleReport:
    """Normalized stationary law over aggregate states plus exact mean waits."""

    epsilon: Fraction
    state_probs: dict  # (s tuple, b) -> probability
    class_waits: tuple  # W_i(eps), floats
    scaled_waits: tuple  # eps * W_i
    normalizer: float  # B: reciprocal of the summed unnormalized weights

    def total_mass(self) -> float:
        return math.fsum(self.state_probs.values())


def exact_waits(instance: Instance, at_epsilon=None) -> OracleReport:
    """Enumerate all aggregate states at the given epsilon and return the
    normalized law together with each class's exact mean waiting time
    W_i = sum over states of [sum over busy prefixes uniquely serving i of
    1/slack] weighted by the state probability."""
    _require_tractable(instance)
    eps = _resolve_epsilon(instance, at_epsilon)
    n, m = instance.n, instance.m
    delta, lam_reach, unique_classes = _mask_tables(instance, eps)
    for mask in range(1, 1 << m):
        if delta[mask] <= 0:
            servers = [j + 1 for j in range(m) if mask >> j & 1]
            raise UnstableInstance(
                f"server subset {{{', '.join(str(j) for j in servers)}}} has slack "
                f"{delta[mask]} <= 0 at epsilon = {eps}; waits diverge"
            )

    delta_f = [float(d) for d in delta]
    reach_f = [float(r) for r in lam_reach]
    norm_terms = []
    wait_terms = [[] for _ in range(n)]
    states = []  # (s, b, unnormalized weight)
    for s in permutations(range(m)):
        # idle-suffix factors, computed right to left; a zero reachable rate
        # kills this b and every smaller one
        suffix_prod = [0.0] * (m + 2)
        suffix_prod[m + 1] = 1.0
        mask = 0
        lowest_valid_b = 0
        for ell in range(m, 0, -1):
            mask |= 1 << s[ell - 1]
            rate = reach_f[mask]
            if rate == 0.0:
                lowest_valid_b = ell
                break
            suffix_prod[ell] = suffix_prod[ell + 1] / rate

        prefix_prod = 1.0
        wait_acc = [0.0] * n
        pmask = 0
        if lowest_valid_b == 0:
            weight = suffix_prod[1]
            norm_terms.append(weight)
            states.append((s, 0, weight))
        else:
            states.append((s, 0, 0.0))
        for b in range(1, m + 1):
            pmask |= 1 << s[b - 1]
            inv = 1.0 / delta_f[pmask]
            prefix_prod *= inv
            for i in unique_classes[pmask]:
                wait_acc[i] += inv
            if b < lowest_valid_b:
                states.append((s, b, 0.0))
                continue
            weight = prefix_prod * suffix_prod[b + 1]
            norm_terms.append(weight)
            states.append((s, b, weight))
            for i in range(n):
                if wait_acc[i]:
                    wait_terms[i].append(weight * wait_acc[i])

    total = math.fsum(norm_terms)
    normalizer = 1.0 / total
    state_probs = {(s, b): w * normalizer for s, b, w in states}
    class_waits = tuple(math.fsum(terms) * normalizer for terms in wait_terms)
    eps_f = float(eps)
    scaled = tuple(eps_f * w for w in class_waits)
    report = OracleReport(eps, state_probs, class_waits, scaled, normalizer)
    assert abs(report.total_mass() - 1.0) <= 1e-10
    return report


def induced_all_busy(components, orders) -> frozenset:
    """Server permutations obtainable by ranking the components and permuting
    servers within each; these are the states that keep probability mass in
    the heavy-traffic limit."""
    out = set()
    for order in orders:
        out.update(induced_server_permutations(order, components))
    return frozenset(out)


def noninduced_mass(report: OracleReport, induced: frozenset) -> float:
    """Probability mass outside the all-busy induced states."""
    m = max(b for _, b in report.state_probs)
    covered = math.fsum(report.state_probs.get((s, m), 0.0) for s in induced)
    return 1.0 - covered


@dataclass(frozen=True)
class SweepRow:
    epsilon: Fraction
    scaled_waits: tuple
    noninduced_mass: float


@dataclass(frozen=True)
class SweepTable:
    rows: tuple
    limit_waits: tuple  # per class, from the ranking mixture

    @property
    def mass_decreasing(self) -> bool:
        masses = [row.noninduced_mass for row in self.rows]
        return all(a > b for a, b in zip(masses, masses[1:]))

    def gaps(self) -> list:
        """Per row: max_i |eps*W_i - limit_wait_i|."""
        return [
            max(abs(sw - lw) for sw, lw in zip(row.scaled_waits, self.limit_waits))
            for row in self.rows
        ]


def limit_consistency_sweep(instance: Instance, eps_list) -> SweepTable:
    """Exact scaled waits and non-induced probability mass along a decreasing
    list of epsilons, next to the limiting waits they should approach."""
    eps_values = [as_rational(e) for e in eps_list]
    if not eps_values:
        raise ParseError("eps_list must not be empty")
    if any(e <= 0 for e in eps_values):
        raise ParseError("every epsilon in the sweep must be positive")
    if any(a <= b for a, b in zip(eps_values, eps_values[1:])):
        raise ParseError(f"eps_list must be strictly decreasing, got {eps_list}")
    _, components, dag = decompose(instance)
    orders = topological_orders(dag)
    induced = induced_all_busy(components, orders)
    rows = []
    for eps in eps_values:
        report = exact_waits(instance.with_epsilon(eps))
        rows.append(SweepRow(eps, report.scaled_waits, noninduced_mass(report, induced)))
    limit_report = component_waits(orders, components)
    limit_waits = tuple(float(limit_report.class_wait[i]) for i in range(instance.n))
    return SweepTable(tuple(rows), limit_waits)


def theta_factor(residual, instance: Instance, servers_perm) -> Fraction:
    """Weight of one within-component server ordering in the limiting
    all-busy law: product over proper prefixes of 1/(capacity of the prefix
    minus limiting demand uniquely served through the residual matching)."""
    value = Fraction(1)
    prefix = []
    for j in servers_perm[:-1]:
        prefix.append(j)
        mu_prefix = sum((instance.rates.mu[v] for v in prefix), Fraction(0))
        served = uniquely_served_classes(residual, prefix)
        lam_prefix = sum((instance.path.Lambda[i] for i in served), Fraction(0))
        gap = mu_prefix - lam_prefix
        # positive inside a component: the residual matching never saturates
        # a proper server prefix
        assert gap > 0, (servers_perm, prefix, gap)
        value /= gap
    return value


def induced_state_limits(instance: Instance) -> dict:
    """Exact limiting probability of each induced all-busy server ranking:
    the ranking weight of its component order times the within-component
    ordering weights, normalized over everything."""
    residual, components, dag = decompose(instance)
    orders = topological_orders(dag)
    Q = [order_weight(order) for order in orders]
    total_Q = sum(Q, Fraction(0))

    serverful = [k for k in range(len(components)) if not components[k].serverless]
    theta = {}
    theta_sum = {}
    for k in serverful:
        block = {}
        for perm in permutations(sorted(components[k].servers)):
            block[perm] = theta_factor(residual, instance, perm)
        theta[k] = block
        theta_sum[k] = sum(block.values(), Fraction(0))
    total_T = Fraction(1)
    for k in serverful:
        total_T *= theta_sum[k]

    limits = {}
    for order, q in zip(orders, Q):
        blocks = [list(theta[k].items()) for k in order.sigma]

        def expand(idx, s, w):
            if idx == len(blocks):
                assert s not in limits
                limits[s] = q * w / (total_Q * total_T)
                return
            for perm, th in blocks[idx]:
                expand(idx + 1, s + perm, w * th)

        expand(0, (), Fraction(1))
    return limits


def critical_subsets(instance: Instance) -> frozenset:
    """Nonempty server subsets whose limiting slack vanishes.  These are
    exactly the prefix unions of the component rankings, which is what makes
    the ranking mixture the right description of the limit."""
    _require_tractable(instance)
    out = set()
    for size in range(1, instance.m + 1):
        for servers in combinations(range(instance.m), size):
            mu_S = sum((instance.rates.mu[j] for j in servers), Fraction(0))
            served = uniquely_served_classes(instance.menu, servers)
            lam_S = sum((instance.path.Lambda[i] for i in served), Fraction(0))
            if mu_S == lam_S:
                out.add(frozenset(servers))
    return frozenset(out)
