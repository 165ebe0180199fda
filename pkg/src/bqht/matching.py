"""Matching probabilities between classes and servers.

In heavy traffic the probability that a class-i job is served by server j
depends only on the limiting arrival rates, not on the slack direction.  A
quadratic program approximates these probabilities: minimize
sum (Lambda_i / mu_j) p_ij^2 over routings that satisfy both balance
families.  The objective is strictly convex on the feasible set, so the
minimizer is unique; an active-set method on the nonnegativity bounds
terminates finitely and exposes the KKT multipliers, which certify the
solution via p_ij = max(mu_j * (eta_i + omega_j), 0).

Classes with zero limiting arrivals never appear in the QP (their objective
weight vanishes); their matching vector follows from a vanishing-arrival
limit when the component graph has the supported shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MaxIterations,
    ParseError,
    UnsupportedDagPattern,
)
from .flows import Flow, limiting_flow
from .model import ArrivalPath, Instance, Menu, ServiceRates, as_rational
from .structure import topological_orders


@dataclass(frozen=True)
class MatchMatrix:
    menu: Menu
    p: tuple  # n x m row tuples
    eta: tuple  # per-class multiplier (None entries for classes outside the QP)
    omega: tuple  # per-server multiplier
    provenance: str  # approx_qp | empirical | serverless_limit

    def __getitem__(self, arc):
        i, j = arc
        return self.p[i][j]

    def row(self, i: int) -> tuple:
        return self.p[i]

    def to_dict(self) -> dict:
        return {
            "p": [[float(v) for v in row] for row in self.p],
            "provenance": self.provenance,
        }


def _feasible_start(menu: Menu, Lambda, mu, start) -> np.ndarray:
    if start is None:
        path = ArrivalPath(tuple(Lambda), tuple(Lambda))
        start = limiting_flow(Instance(menu, ServiceRates(tuple(mu)), path))
    if isinstance(start, Flow):
        rows = [
            [float(f / L) for f in row]
            for row, L in zip(start.entries, Lambda)
        ]
    else:
        rows = [[float(v) for v in row] for row in start]
    return np.asarray(rows, dtype=float)


def qp_matching(
    menu: Menu,
    Lambda: Sequence,
    mu: Sequence,
    start=None,
    max_iter: Optional[int] = None,
) -> MatchMatrix:
    """Unique minimizer of sum (Lambda_i/mu_j) p_ij^2 over nonnegative
    routings with unit row sums and exact server loads, with multipliers.

    `start` may be a Flow or a row-stochastic matrix; by default one feasible
    routing is computed from a max flow.  The minimizer does not depend on
    the start (used by tests to confirm uniqueness).
    """
    Lambda = [as_rational(v) for v in Lambda]
    mu = [as_rational(v) for v in mu]
    if len(Lambda) != menu.n or len(mu) != menu.m:
        raise DimensionMismatch(
            f"menu is {menu.n}x{menu.m} but rates are {len(Lambda)} and {len(mu)}"
        )
    if any(L <= 0 for L in Lambda):
        raise ParseError("every class in the routing program needs a positive rate")

    arcs = menu.arcs()
    nv = len(arcs)
    n, m = menu.n, menu.m
    curvature = np.array([2.0 * float(Lambda[i] / mu[j]) for i, j in arcs])

    # equality rows: one per class (sum to 1), one per server (weighted load)
    A = np.zeros((n + m, nv))
    for a, (i, j) in enumerate(arcs):
        A[i, a] = 1.0
        A[n + j, a] = float(Lambda[i])
    b = np.concatenate([np.ones(n), np.array([float(v) for v in mu])])

    p_full = _feasible_start(menu, Lambda, mu, start)
    p = np.array([p_full[i, j] for i, j in arcs])

    snap = 1e-12
    dual_tol = 1e-10
    working = p <= snap
    p[working] = 0.0
    limit = max_iter or 50 * (nv + 1)

    y = np.zeros(n + m)
    for _ in range(limit):
        free = ~working
        A_free = A[:, free]
        scaled = A_free / curvature[free]  # A_f Q_f^{-1}
        y, *_ = np.linalg.lstsq(scaled @ A_free.T, b, rcond=None)
        target = np.zeros(nv)
        target[free] = (A_free.T @ y) / curvature[free]

        negative = free & (target < -snap)
        if not negative.any():
            p = np.where(free, target, 0.0)
            multiplier_gap = A.T @ y  # eta_bar_i + Lambda_i * omega_bar_j per arc
            blocked = working & (multiplier_gap > dual_tol)
            if not blocked.any():
                break
            release = np.argmax(np.where(blocked, multiplier_gap, -np.inf))
            working[release] = False
        else:
            d = target - p
            shrinking = free & (d < -snap)
            steps = np.where(shrinking, -p / np.where(shrinking, d, 1.0), np.inf)
            blocker = int(np.argmin(steps))
            alpha = min(1.0, steps[blocker])
            p = np.maximum(p + alpha * d, 0.0)
            working[blocker] = True
            p[blocker] = 0.0
    else:
        raise MaxIterations(f"routing program did not settle in {limit} iterations")

    eta = [None] * n
    omega = [float(y[n + j]) / 2.0 for j in range(m)]
    for i in range(n):
        eta[i] = float(y[i]) / (2.0 * float(Lambda[i]))

    rows = [[0.0] * m for _ in range(n)]
    for a, (i, j) in enumerate(arcs):
        rows[i][j] = float(p[a])
    return MatchMatrix(
        menu,
        tuple(tuple(r) for r in rows),
        tuple(eta),
        tuple(omega),
        "approx_qp",
    )


def kkt_verify(match: MatchMatrix, Lambda, mu, tol: float = 1e-8) -> bool:
    """First-order certificate: on every menu arc the probability equals
    max(mu_j*(eta_i+omega_j), 0) within tol, and both balance families hold."""
    Lambda = [float(as_rational(v)) for v in Lambda]
    mu = [float(as_rational(v)) for v in mu]
    menu = match.menu
    for i in range(menu.n):
        for j in range(menu.m):
            p = float(match.p[i][j])
            if not menu.rows[i][j]:
                if abs(p) > tol:
                    return False
                continue
            if p < -tol:
                return False
            if match.eta[i] is None:
                return False
            stationary = max(mu[j] * (match.eta[i] + match.omega[j]), 0.0)
            if abs(p - stationary) > tol:
                return False
    for i in range(menu.n):
        if Lambda[i] > 0 and abs(sum(match.p[i]) - 1.0) > tol:
            return False
    for j in range(menu.m):
        load = sum(Lambda[i] * float(match.p[i][j]) for i in range(menu.n))
        if abs(load - mu[j]) > tol:
            return False
    return True


def serverless_matching(instance: Instance, components, dag, i: int) -> tuple:
    """Matching vector for a class with zero limiting arrivals, via the
    vanishing-arrival limit.  Supported shape: the class's component rides the
    last ranked position in every ranking (each compatible component is then
    chosen with probability proportional to its slack, split across its
    servers by service rate).  Raises UnsupportedDagPattern otherwise."""
    if instance.path.Lambda[i] != 0:
        raise ParseError(f"class {i} has positive limiting rate; use the QP instead")
    own = next(
        (k for k, c in enumerate(components) if i in c.classes and c.serverless), None
    )
    if own is None:
        raise UnsupportedDagPattern(f"class {i} is not a server-less component")

    orders = topological_orders(dag)
    last = len(orders[0].sigma) - 1
    if not all(order.position_of(own) == last for order in orders):
        raise UnsupportedDagPattern(
            "class rides different ranking positions depending on the ranking; "
            "no closed form, estimate by simulation with a small injected rate"
        )

    compatible = set(instance.menu.servers_of(i))
    weights = []
    for k, comp in enumerate(components):
        if comp.serverless:
            continue
        overlap = compatible & comp.servers
        if not overlap:
            continue
        if overlap != comp.servers:
            raise UnsupportedDagPattern(
                f"class {i + 1} reaches only part of a pooled component; "
                "no closed form, estimate by simulation"
            )
        if comp.gamma_tilde <= 0:
            raise UnsupportedDagPattern(
                f"compatible component has non-positive slack {comp.gamma_tilde}"
            )
        weights.append((k, comp))
    total = sum((comp.gamma_tilde for _, comp in weights), Fraction(0))
    if total <= 0:
        raise UnsupportedDagPattern("no positively slack compatible component")

    out = [Fraction(0)] * instance.m
    for k, comp in weights:
        for j in comp.servers:
            out[j] = comp.gamma_tilde * instance.rates.mu[j] / comp.mu_tilde / total
    return tuple(out)


def class_utilities(match: MatchMatrix, waits, V, delta) -> np.ndarray:
    """Utility of each customer type joining each class: expected server value
    under the matching minus delta times the class's scaled wait."""
    n, m = match.menu.n, match.menu.m
    V = np.asarray([[float(as_rational(v)) for v in row] for row in V], dtype=float)
    if V.ndim != 2 or V.shape[1] != m:
        raise DimensionMismatch(f"valuations must have {m} columns")
    if hasattr(waits, "get"):
        wait_vec = [waits[i] for i in range(n)]
    else:
        wait_vec = list(waits)
    if len(wait_vec) != n:
        raise DimensionMismatch(f"need one wait per class, got {len(wait_vec)}")
    p = np.asarray([[float(v) for v in row] for row in match.p], dtype=float)
    d = float(as_rational(delta))
    return V @ p.T - d * np.asarray([float(w) for w in wait_vec])
