"""Menu design: choosing compatibility arcs to shape limiting waits.

At the limit a menu acts on waits only through its pooled components and the
partial order between them, so design reduces to questions about rankings:
which rankings are achievable at all, which one minimizes the average delay
(then pin it with one cross-component arc per consecutive pair), and which
per-cell slacks realize a requested wait profile on a chained graph.

The chained-graph synthesis deserves a note.  For cells of size one the
per-cell waits satisfy a triangular recursion and a backward sweep of scalar
bisections solves the system outright.  For wider cells the triangular
recursion misstates the mixture: a component occupies each within-cell
position equally often, so the achieved wait of cell l is

    W_l = sum_{l' < l} T_{l'} + (1/n_l) * sum_{s=1..n_l} s / (G_l + s*g_l),

where g_l is the common slack of cell l, G_l = sum_{j>l} n_j*g_j, and
T_l = sum_{s=1..n_l} 1 / (G_l + s*g_l) is the full block of cell l.  The
solver below starts from the triangular sweep (exact when all cells are
singletons) and polishes with Gauss-Seidel on the true equations; every
scalar equation is strictly decreasing in its own slack, so bisection is
safe.  Solutions are re-verified through the general mixture machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations, product
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidConfig,
    NoAdmissibleOrder,
    NonMonotoneTargets,
    NoRoot,
    PrefixSlackViolation,
    SolverFailure,
    TooLarge,
    UnsupportedDagPattern,
)
from .model import SUBSET_ENUMERATION_CAP, Menu, as_rational
from .structure import CrpDag, TopologicalOrder, build_dag, topological_orders
from .waits import component_waits, conditional_average_wait

# Full enumeration of K'! candidate rankings; factorial growth caps K'.
DESIGN_ORDER_CAP = 8
# Verification enumerates the product of within-cell permutations.
VERIFY_ORDER_CAP = 5040

SOLVE_STEPS = 200
SOLVE_RTOL = 5e-14


def single_crp_condition(menu: Menu, Lambda, mu) -> bool:
    """True when no strict subset of servers can turn critical on its own.

    For every nonempty S strictly inside the server set, the demand that is
    trapped in S (classes whose compatible servers all lie in S) must stay
    strictly below the capacity of S.  Then the residual matching connects
    everything and the menu pools into a single component for every
    admissible slack direction.
    """
    lam = [as_rational(v) for v in Lambda]
    rates = [as_rational(v) for v in mu]
    if len(lam) != menu.n:
        raise DimensionMismatch(
            f"menu has {menu.n} classes but Lambda has {len(lam)} entries"
        )
    if len(rates) != menu.m:
        raise DimensionMismatch(
            f"menu has {menu.m} servers but mu has {len(rates)} entries"
        )
    m = menu.m
    if m > SUBSET_ENUMERATION_CAP:
        raise TooLarge(
            f"subset enumeration requires m <= {SUBSET_ENUMERATION_CAP} servers, got {m}"
        )
    masks = [menu.row_mask(i) for i in range(menu.n)]
    for subset in range(1, (1 << m) - 1):
        trapped = sum(
            (lam[i] for i in range(menu.n) if masks[i] & ~subset == 0),
            Fraction(0),
        )
        capacity = sum(
            (rates[j] for j in range(m) if subset >> j & 1), Fraction(0)
        )
        if trapped >= capacity:
            return False
    return True


def admissible_topological_orders(components, gamma_tilde=None) -> list:
    """Rankings of the server-ful components achievable by some menu.

    Unlike ``structure.topological_orders`` there is no graph to respect; the
    designer picks the arcs afterwards.  A permutation qualifies when every
    prefix of aggregated slacks stays strictly positive.  Server-less
    components ride at the last position, the delay-minimizing attachment
    (their slack is never positive, so folding it in any earlier prefix only
    hurts).
    """
    if gamma_tilde is None:
        gtilde = [c.gamma_tilde for c in components]
    else:
        gtilde = [as_rational(g) for g in gamma_tilde]
        if len(gtilde) != len(components):
            raise DimensionMismatch(
                f"{len(components)} components but gamma_tilde has {len(gtilde)} entries"
            )
    serverful = [k for k, c in enumerate(components) if not c.serverless]
    serverless = [k for k, c in enumerate(components) if c.serverless]
    if len(serverful) > DESIGN_ORDER_CAP:
        raise TooLarge(
            f"candidate rankings require K' <= {DESIGN_ORDER_CAP} "
            f"server-ful components, got {len(serverful)}"
        )
    tail_gamma = sum((gtilde[k] for k in serverless), Fraction(0))
    out = []
    for sigma in permutations(serverful):
        groups = [frozenset({k}) for k in sigma]
        gammas = [gtilde[k] for k in sigma]
        groups[-1] = groups[-1] | frozenset(serverless)
        gammas[-1] += tail_gamma
        total = Fraction(0)
        ok = True
        for g in gammas:
            total += g
            if total <= 0:
                ok = False
                break
        if ok:
            out.append(TopologicalOrder(sigma, tuple(groups), tuple(gammas)))
    return out


@dataclass(frozen=True)
class DesignReport:
    """Outcome of a menu-design problem.

    ``order_delays`` lists every admissible ranking with its conditional
    average delay (demand-weighted, in aggregate units: multiply by the
    reciprocal total service rate for the per-customer average).
    """

    sigma_star: TopologicalOrder
    menu: Menu
    order_delays: tuple  # (sigma, Fraction) per admissible ranking
    gamma_hat: Optional[tuple] = None  # per chain cell, for wait targets
    achieved_waits: Optional[tuple] = None


def min_delay_menu(
    residual: Menu, components, gamma_tilde=None, mu_tilde=None
) -> DesignReport:
    """Augment the residual matching into the menu with the least average
    delay.

    Scores every admissible ranking, picks the minimizer (ties broken by
    lexicographic sigma), then adds exactly one arc per consecutive pair --
    lowest-indexed class of the later component onto the lowest-indexed
    server of the earlier one -- so the resulting graph admits that ranking
    alone.  Server-less classes are attached to the last ranked component.
    """
    orders = admissible_topological_orders(components, gamma_tilde)
    if not orders:
        raise NoAdmissibleOrder(
            "no ranking keeps every slack prefix positive; no menu over these "
            "components is admissible"
        )
    if mu_tilde is None:
        mu_by_comp = [c.mu_tilde for c in components]
    else:
        mu_by_comp = [as_rational(v) for v in mu_tilde]
        if len(mu_by_comp) != len(components):
            raise DimensionMismatch(
                f"{len(components)} components but mu_tilde has {len(mu_by_comp)} entries"
            )
    table = [
        (order.sigma, conditional_average_wait(order, mu_by_comp))
        for order in orders
    ]
    best = min(range(len(orders)), key=lambda t: (table[t][1], table[t][0]))
    star = orders[best]

    rows = [list(row) for row in residual.rows]
    for earlier, later in zip(star.sigma, star.sigma[1:]):
        i = min(components[later].classes)
        j = min(components[earlier].servers)
        rows[i][j] = 1
    anchor = min(components[star.sigma[-1]].servers)
    for k, comp in enumerate(components):
        if comp.serverless:
            for i in comp.classes:
                rows[i][anchor] = 1
    designed = Menu.from_rows(rows)

    admitted = topological_orders(build_dag(designed, components))
    if [o.sigma for o in admitted] != [star.sigma]:
        raise SolverFailure(
            "constructed menu admits rankings other than the chosen one; "
            "this indicates an internal inconsistency"
        )
    return DesignReport(star, designed, tuple(table))


@dataclass(frozen=True)
class ChainPartition:
    """Cells of a chained component graph, pure donors first.

    Arcs run from every component of one cell to every component of the
    next, so any ranking lists the cells back to front: the last cell first
    and cell one last.  Wait targets must therefore increase with the cell
    index.
    """

    cells: tuple  # per cell, sorted tuple of component indices
    components: tuple

    def __post_init__(self):
        if not self.cells or any(not cell for cell in self.cells):
            raise InvalidConfig("chain cells must be nonempty")
        seen = set()
        for cell in self.cells:
            for k in cell:
                if k in seen:
                    raise InvalidConfig(f"component {k + 1} appears in two cells")
                seen.add(k)
                if not (0 <= k < len(self.components)):
                    raise InvalidConfig(f"component index {k} out of range")
                if self.components[k].serverless:
                    raise UnsupportedDagPattern(
                        "server-less components carry no slack of their own "
                        "and cannot sit in a chain cell"
                    )
        if len(seen) != len(self.components):
            raise InvalidConfig("chain cells must cover every component")

    @property
    def L(self) -> int:
        return len(self.cells)

    @property
    def counts(self) -> tuple:
        return tuple(len(cell) for cell in self.cells)


def find_chain_partition(dag: CrpDag) -> ChainPartition:
    """Group the components of a chained graph into consecutive cells.

    Cells are the longest-path levels from the sources; the grouping is a
    chain only if the arc set is exactly the complete bipartite relation
    between consecutive levels, otherwise UnsupportedDagPattern is raised.
    """
    if dag.I0:
        raise UnsupportedDagPattern(
            "server-less components have no slack to tune; chained wait "
            "synthesis covers server-ful graphs only"
        )
    preds = {k: set() for k in range(dag.K)}
    for a, b in dag.arcs:
        preds[b].add(a)
    level = {}
    remaining = set(range(dag.K))
    while remaining:
        ready = [k for k in remaining if preds[k] <= level.keys()]
        if not ready:
            raise UnsupportedDagPattern("component graph is not acyclic")
        for k in ready:
            level[k] = max((level[a] + 1 for a in preds[k]), default=0)
            remaining.discard(k)
    depth = max(level.values()) + 1
    cells = [tuple(sorted(k for k in level if level[k] == c)) for c in range(depth)]
    expected = {
        (a, b)
        for lower, upper in zip(cells, cells[1:])
        for a in lower
        for b in upper
    }
    if set(dag.arcs) != expected:
        raise UnsupportedDagPattern(
            "component graph is not chained: arcs are not exactly the "
            "complete relation between consecutive cells"
        )
    return ChainPartition(tuple(cells), tuple(dag.components))


def chain_waits(counts, gamma_hat) -> tuple:
    """Per-cell limiting waits when each cell shares one slack value.

    All rankings of a chained graph carry equal weight and a component is
    equally likely at each position inside its cell, which collapses the
    mixture to the closed form in the module docstring.
    """
    if len(counts) != len(gamma_hat):
        raise DimensionMismatch(
            f"{len(counts)} cells but {len(gamma_hat)} slack values"
        )
    L = len(counts)
    bases = _cell_bases(counts, gamma_hat)
    for c in range(L):
        if bases[c] + counts[c] * gamma_hat[c] <= 0 or bases[c] + gamma_hat[c] <= 0:
            raise PrefixSlackViolation(
                f"cell {c + 1} drives a slack prefix non-positive"
            )
    waits = []
    below = 0.0  # sum of full blocks of cells ranked after cell c
    for c in range(L):
        block = [bases[c] + s * gamma_hat[c] for s in range(1, counts[c] + 1)]
        own = sum(s / b for s, b in zip(range(1, counts[c] + 1), block))
        waits.append(below + own / counts[c])
        below += sum(1.0 / b for b in block)
    return tuple(waits)


def _cell_bases(counts, gamma_hat) -> list:
    """bases[c] = slack mass of all cells ranked before cell c."""
    L = len(counts)
    bases = [0.0] * L
    acc = 0.0
    for c in range(L - 1, -1, -1):
        bases[c] = acc
        acc += counts[c] * gamma_hat[c]
    return bases


def _wait_of_cell(counts, gamma_hat, c) -> float:
    """Achieved wait of cell c, +inf when the slacks leave the domain."""
    bases = _cell_bases(counts, gamma_hat)
    total = 0.0
    for cc in range(c + 1):
        block_ok = all(
            bases[cc] + s * gamma_hat[cc] > 0 for s in (1, counts[cc])
        )
        if not block_ok:
            return math.inf
        if cc < c:
            total += sum(
                1.0 / (bases[cc] + s * gamma_hat[cc])
                for s in range(1, counts[cc] + 1)
            )
        else:
            total += sum(
                s / (bases[cc] + s * gamma_hat[cc])
                for s in range(1, counts[cc] + 1)
            ) / counts[cc]
    return total


def _bisect_cell(counts, gamma_hat, c, target) -> float:
    """Solve for cell c's slack holding the others fixed.

    The achieved wait is strictly decreasing in the cell's own slack (it
    enters every relevant denominator with a positive coefficient), falling
    from +inf at the domain edge to 0, so the root exists and is unique.
    """
    lo = _domain_edge(counts, gamma_hat, c)
    hi = max(gamma_hat[c], lo + 1.0, 1.0)
    work = list(gamma_hat)
    for _ in range(200):
        work[c] = hi
        if _wait_of_cell(counts, work, c) < target:
            break
        hi = lo + 2.0 * (hi - lo)
    else:
        raise NoRoot(f"no slack for cell {c + 1} reaches wait {target}")
    for _ in range(150):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        work[c] = mid
        if _wait_of_cell(counts, work, c) > target:
            lo = mid
        else:
            hi = mid
    return hi


def _domain_edge(counts, gamma_hat, c) -> float:
    """Largest slack value for cell c at which some prefix hits zero.

    Every positivity constraint is affine increasing in the cell's own
    slack, so the feasible set is the open half-line above this edge.
    """
    L = len(counts)
    base = sum(counts[j] * gamma_hat[j] for j in range(c + 1, L))
    # own block: base + s*g > 0 for s in 1..n_c
    edge = max(-base, -base / counts[c])
    for cc in range(c):
        # block of a later-ranked cell: rest + n_c*g + s*gamma_cc > 0
        rest = sum(
            counts[j] * gamma_hat[j] for j in range(cc + 1, L) if j != c
        )
        s = counts[cc] if gamma_hat[cc] < 0 else 1
        edge = max(edge, (-rest - s * gamma_hat[cc]) / counts[c])
    return edge


def implement_waits_chained(partition: ChainPartition, targets) -> tuple:
    """Per-cell slack values whose limiting waits match the targets.

    Targets must be strictly increasing and positive, cell one smallest.
    The triangular sweep supplies the starting point (already exact when
    every cell is a singleton); Gauss-Seidel polishing on the true mixture
    equations handles wider cells.  The result is verified independently
    through the general ranking mixture before being returned.
    """
    counts = partition.counts
    L = partition.L
    try:
        goal = [float(as_rational(t)) for t in targets]
    except (TypeError, ValueError):
        goal = [float(t) for t in targets]
    if len(goal) != L:
        raise DimensionMismatch(f"{L} chain cells but {len(goal)} targets")
    if goal[0] <= 0 or any(a >= b for a, b in zip(goal, goal[1:])):
        raise NonMonotoneTargets(
            "wait targets must be positive and strictly increasing along the chain"
        )

    gamma_hat = _solve_chain(counts, goal)
    _verify_chain(partition, gamma_hat, goal)
    return tuple(gamma_hat)


def _in_domain(counts, gamma_hat) -> bool:
    bases = _cell_bases(counts, gamma_hat)
    return all(
        bases[c] + gamma_hat[c] > 0 and bases[c] + counts[c] * gamma_hat[c] > 0
        for c in range(len(counts))
    )


def _chain_jacobian(counts, gamma_hat):
    """Partial derivatives of the achieved cell waits in the slacks."""
    L = len(counts)
    bases = _cell_bases(counts, gamma_hat)
    jac = np.zeros((L, L))
    for c in range(L):
        for cp in range(c + 1):
            for s in range(1, counts[cp] + 1):
                weight = 1.0 if cp < c else s / counts[c]
                dsq = (bases[cp] + s * gamma_hat[cp]) ** 2
                jac[c, cp] -= weight * s / dsq
                for d in range(cp + 1, L):
                    jac[c, d] -= weight * counts[d] / dsq
    return jac


def _solve_chain(counts, goal) -> list:
    """Newton iteration from the triangular start, with a monotone
    bisection sweep as the fallback whenever a step stalls."""
    L = len(counts)
    gamma_hat = [0.0] * L
    base = 0.0
    for c in range(L - 1, -1, -1):
        increment = goal[c] - (goal[c - 1] if c > 0 else 0.0)
        gamma_hat[c] = _bisect_increment(counts[c], base, increment)
        base += counts[c] * gamma_hat[c]

    scale = max(1.0, max(abs(t) for t in goal))
    residual = [w - t for w, t in zip(chain_waits(counts, gamma_hat), goal)]
    worst = max(abs(r) for r in residual)
    for _ in range(SOLVE_STEPS):
        if worst <= SOLVE_RTOL * scale:
            return gamma_hat
        try:
            step = np.linalg.solve(
                _chain_jacobian(counts, gamma_hat), [-r for r in residual]
            )
        except np.linalg.LinAlgError:
            step = None
        accepted = False
        alpha = 1.0
        while step is not None and alpha > 1e-8:
            trial = [g + alpha * s for g, s in zip(gamma_hat, step)]
            if _in_domain(counts, trial):
                trial_residual = [
                    w - t for w, t in zip(chain_waits(counts, trial), goal)
                ]
                trial_worst = max(abs(r) for r in trial_residual)
                if trial_worst < worst:
                    gamma_hat, residual, worst = trial, trial_residual, trial_worst
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            # safeguarded sweep: re-solve each cell alone, back to front
            for c in range(L - 1, -1, -1):
                gamma_hat[c] = _bisect_cell(counts, gamma_hat, c, goal[c])
            residual = [
                w - t for w, t in zip(chain_waits(counts, gamma_hat), goal)
            ]
            worst = max(abs(r) for r in residual)
    raise NoRoot(
        "chained wait synthesis did not converge; this indicates an "
        "internal error because the system has a unique root"
    )


def _bisect_increment(n: int, base: float, increment: float) -> float:
    """Solve (1/n) * sum_s 1/(base + s*g) = increment for g, by bisection."""
    lo = -base / n
    hi = max(1.0, lo + 1.0)

    def value(g):
        if base + g <= 0 or base + n * g <= 0:
            return math.inf
        return sum(1.0 / (base + s * g) for s in range(1, n + 1)) / n

    for _ in range(200):
        if value(hi) < increment:
            break
        hi = lo + 2.0 * (hi - lo)
    else:
        raise NoRoot("triangular sweep found no bracket")
    for _ in range(150):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if value(mid) > increment:
            lo = mid
        else:
            hi = mid
    return hi


def _verify_chain(partition: ChainPartition, gamma_hat, goal) -> None:
    """Re-derive the achieved waits through the general mixture machinery."""
    counts = partition.counts
    n_orders = 1
    for n in counts:
        n_orders *= math.factorial(n)
    if n_orders > VERIFY_ORDER_CAP:
        return
    slack = [Fraction(g) for g in gamma_hat]
    orders = []
    pools = [permutations(cell) for cell in reversed(partition.cells)]
    gammas_by_cell = list(reversed([(slack[c],) * counts[c] for c in range(partition.L)]))
    for arrangement in product(*pools):
        sigma = tuple(k for cell in arrangement for k in cell)
        groups = tuple(frozenset({k}) for k in sigma)
        gammas = tuple(g for cell in gammas_by_cell for g in cell)
        orders.append(TopologicalOrder(sigma, groups, gammas))
    report = component_waits(orders, list(partition.components))
    for c, cell in enumerate(partition.cells):
        for k in cell:
            achieved = float(report.component_wait[k])
            if abs(achieved - goal[c]) > 1e-9 * max(1.0, goal[c]):
                raise NoRoot(
                    f"verification drift for component {k + 1}: achieved "
                    f"{achieved!r}, target {goal[c]!r}"
                )


def braess_delta(gamma1, gamma2) -> Fraction:
    """Average-delay change from letting class 1 also use server 2.

    Positive means the extra flexibility hurts: pooling drags class 1 into
    server 2's queue more than it relieves class 1's own server.
    """
    g1 = as_rational(gamma1)
    g2 = as_rational(gamma2)
    if g1 <= 0 or g2 <= 0:
        raise InvalidConfig("both slack components must be positive")
    return Fraction(1, 1) / (g1 + g2) - Fraction(1, 2) / g1


def implementability_necessary(waits, orders) -> bool:
    """Necessary condition for a per-component wait vector.

    A component ranked earlier always waits longer, so asking W_k <= W_kappa
    is hopeless unless some ranking places kappa at or before k.  Checked
    for every ordered pair; ties are fine when both relative placements
    occur across the admissible rankings.
    """
    keys = sorted(waits) if isinstance(waits, dict) else list(range(len(waits)))
    for k in keys:
        for kappa in keys:
            if k == kappa or waits[k] > waits[kappa]:
                continue
            if not any(
                order.position_of(kappa) <= order.position_of(k)
                for order in orders
            ):
                return False
    return True
