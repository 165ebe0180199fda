"""Core domain types and feasibility checks for bipartite service systems.

A system couples a binary compatibility menu (service classes by servers)
with server speeds and an arrival-rate family lambda(eps) = Lambda - eps*gamma
that approaches criticality as eps -> 0.  All rates are carried as exact
rationals so that structural classifications (stability, admissibility,
zero-slack detection) never flip on floating-point rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Optional, Sequence

from .errors import (
    DimensionMismatch,
    InvalidMenu,
    ParseError,
    TooLarge,
)

# Exhaustive subset enumeration is exponential in the server count.
SUBSET_ENUMERATION_CAP = 20


def as_rational(value) -> Fraction:
    """Convert a JSON-style number to an exact Fraction.

    Ints and rational/decimal strings ("0.3", "1/3") convert exactly;
    floats convert to their exact binary value.
    """
    if isinstance(value, bool):
        raise ParseError(f"expected a number, got {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ParseError(f"non-finite number {value!r}")
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ParseError(f"cannot parse number {value!r}") from exc
    raise ParseError(f"expected a number, got {type(value).__name__}")


@dataclass(frozen=True)
class Menu:
    """Binary compatibility matrix: rows index service classes, columns servers."""

    rows: tuple

    def __post_init__(self):
        if not self.rows or not self.rows[0]:
            raise InvalidMenu("menu must have at least one class and one server")
        m = len(self.rows[0])
        for i, row in enumerate(self.rows):
            if len(row) != m:
                raise DimensionMismatch(f"menu row {i} has {len(row)} entries, expected {m}")
            for j, cell in enumerate(row):
                if isinstance(cell, bool) or cell not in (0, 1):
                    raise InvalidMenu(f"menu entry ({i},{j}) must be 0 or 1, got {cell!r}")
        for j in range(m):
            if not any(row[j] for row in self.rows):
                raise InvalidMenu(f"server {j} is compatible with no service class")

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable[int]]) -> "Menu":
        return cls(tuple(tuple(row) for row in rows))

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def m(self) -> int:
        return len(self.rows[0])

    def servers_of(self, i: int) -> tuple:
        return tuple(j for j, cell in enumerate(self.rows[i]) if cell)

    def classes_of(self, j: int) -> tuple:
        return tuple(i for i, row in enumerate(self.rows) if row[j])

    def row_mask(self, i: int) -> int:
        mask = 0
        for j, cell in enumerate(self.rows[i]):
            if cell:
                mask |= 1 << j
        return mask

    def arcs(self) -> tuple:
        """All (class, server) pairs present in the menu."""
        return tuple(
            (i, j) for i, row in enumerate(self.rows) for j, cell in enumerate(row) if cell
        )


@dataclass(frozen=True)
class ServiceRates:
    mu: tuple

    def __post_init__(self):
        for j, rate in enumerate(self.mu):
            if rate <= 0:
                raise ParseError(f"service rate mu[{j}] must be positive, got {rate}")

    @classmethod
    def of(cls, values: Sequence) -> "ServiceRates":
        return cls(tuple(as_rational(v) for v in values))

    @property
    def total(self) -> Fraction:
        return sum(self.mu, Fraction(0))


@dataclass(frozen=True)
class ArrivalPath:
    """Arrival-rate family lambda(eps) = Lambda - eps*gamma.

    Lambda holds the limiting rates and gamma the slack direction.  A class
    with Lambda_i = 0 must have gamma_i <= 0 so that its prelimit rate is
    never negative; gamma_i = 0 means the class receives no arrivals at any
    eps and is analyzed as the vanishing-arrival limit.
    """

    Lambda: tuple
    gamma: tuple

    def __post_init__(self):
        if len(self.Lambda) != len(self.gamma):
            raise DimensionMismatch(
                f"Lambda has {len(self.Lambda)} entries but gamma has {len(self.gamma)}"
            )
        for i, rate in enumerate(self.Lambda):
            if rate < 0:
                raise ParseError(f"Lambda[{i}] must be nonnegative, got {rate}")
            if rate == 0 and self.gamma[i] > 0:
                raise ParseError(
                    f"gamma[{i}] must be <= 0 because Lambda[{i}] = 0 "
                    "(otherwise the prelimit arrival rate is negative)"
                )
        if sum(self.gamma, Fraction(0)) <= 0:
            raise ParseError("total slack |gamma| must be positive")

    @classmethod
    def of(cls, Lambda: Sequence, gamma: Sequence) -> "ArrivalPath":
        return cls(
            tuple(as_rational(v) for v in Lambda),
            tuple(as_rational(v) for v in gamma),
        )

    @property
    def total_gamma(self) -> Fraction:
        return sum(self.gamma, Fraction(0))

    def rates_at(self, epsilon) -> tuple:
        eps = as_rational(epsilon)
        return tuple(L - eps * g for L, g in zip(self.Lambda, self.gamma))


@dataclass(frozen=True)
class Instance:
    menu: Menu
    rates: ServiceRates
    path: ArrivalPath
    epsilon: Optional[Fraction] = None

    def __post_init__(self):
        if len(self.rates.mu) != self.menu.m:
            raise DimensionMismatch(
                f"menu has {self.menu.m} servers but mu has {len(self.rates.mu)} entries"
            )
        if len(self.path.Lambda) != self.menu.n:
            raise DimensionMismatch(
                f"menu has {self.menu.n} classes but Lambda has {len(self.path.Lambda)} entries"
            )
        if sum(self.path.Lambda, Fraction(0)) != self.rates.total:
            raise ParseError(
                f"|Lambda| = {sum(self.path.Lambda, Fraction(0))} must equal |mu| = {self.rates.total}"
            )
        if self.epsilon is not None:
            if self.epsilon <= 0:
                raise ParseError(f"epsilon must be positive, got {self.epsilon}")
            for i, rate in enumerate(self.path.rates_at(self.epsilon)):
                if rate < 0:
                    raise ParseError(
                        f"lambda[{i}] = {rate} is negative at epsilon = {self.epsilon}"
                    )

    @property
    def n(self) -> int:
        return self.menu.n

    @property
    def m(self) -> int:
        return self.menu.m

    def lambda_at(self, epsilon) -> tuple:
        return self.path.rates_at(epsilon)

    def with_epsilon(self, epsilon) -> "Instance":
        return Instance(self.menu, self.rates, self.path, as_rational(epsilon))


def make_instance(menu_rows, mu, Lambda, gamma, epsilon=None) -> Instance:
    eps = None if epsilon is None else as_rational(epsilon)
    return Instance(
        Menu.from_rows(menu_rows),
        ServiceRates.of(mu),
        ArrivalPath.of(Lambda, gamma),
        eps,
    )


_INSTANCE_KEYS = {"menu", "mu", "Lambda", "gamma", "epsilon"}


def instance_from_dict(data: dict) -> Instance:
    """Build an Instance from the JSON schema
    {"menu": [[0|1,...],...], "mu": [...], "Lambda": [...], "gamma": [...], "epsilon": optional}.
    """
    if not isinstance(data, dict):
        raise ParseError(f"instance must be a JSON object, got {type(data).__name__}")
    missing = {"menu", "mu", "Lambda", "gamma"} - set(data)
    if missing:
        raise ParseError(f"instance is missing keys: {', '.join(sorted(missing))}")
    unknown = set(data) - _INSTANCE_KEYS
    if unknown:
        raise ParseError(f"instance has unknown keys: {', '.join(sorted(unknown))}")
    menu = data["menu"]
    if not isinstance(menu, (list, tuple)) or not all(
        isinstance(row, (list, tuple)) for row in menu
    ):
        raise ParseError("menu must be a list of 0/1 rows")
    return make_instance(menu, data["mu"], data["Lambda"], data["gamma"], data.get("epsilon"))


def instance_to_dict(instance: Instance) -> dict:
    out = {
        "menu": [list(row) for row in instance.menu.rows],
        "mu": [str(v) for v in instance.rates.mu],
        "Lambda": [str(v) for v in instance.path.Lambda],
        "gamma": [str(v) for v in instance.path.gamma],
    }
    if instance.epsilon is not None:
        out["epsilon"] = str(instance.epsilon)
    return out


def server_mask(servers: Iterable[int], m: int) -> int:
    mask = 0
    for j in servers:
        if not 0 <= j < m:
            raise DimensionMismatch(f"server index {j} out of range for {m} servers")
        mask |= 1 << j
    return mask


def uniquely_served_classes(menu: Menu, servers: Iterable[int]) -> frozenset:
    """Classes that can only be served by servers inside the given subset."""
    mask = server_mask(servers, menu.m)
    return frozenset(i for i in range(menu.n) if menu.row_mask(i) & ~mask == 0)


def slack(instance: Instance, servers: Iterable[int], at_epsilon) -> Fraction:
    """Capacity slack of a server subset: mu_S minus the arrival rate of the
    classes that subset uniquely serves, at the given epsilon."""
    served = uniquely_served_classes(instance.menu, servers)
    lam = instance.lambda_at(at_epsilon)
    mu_S = sum((instance.rates.mu[j] for j in set(servers)), Fraction(0))
    return mu_S - sum((lam[i] for i in served), Fraction(0))


def _check_subset_cap(m: int):
    if m > SUBSET_ENUMERATION_CAP:
        raise TooLarge(
            f"subset enumeration requires m <= {SUBSET_ENUMERATION_CAP} servers, got {m}"
        )


def _scaled_ints(*vectors) -> tuple:
    """Rescale rational vectors by a common denominator so subset sums can be
    accumulated with integer arithmetic (exact and much faster than Fractions)."""
    denom = 1
    for vec in vectors:
        for v in vec:
            denom = denom * v.denominator // math.gcd(denom, v.denominator)
    return tuple([int(v * denom) for v in vec] for vec in vectors)


def _unique_load_table(menu: Menu, weights: Sequence[int]) -> list:
    """table[mask] = total weight of classes served only within the server
    subset encoded by mask (a subset-sum / zeta transform over row masks)."""
    m = menu.m
    table = [0] * (1 << m)
    for i in range(menu.n):
        table[menu.row_mask(i)] += weights[i]
    for bit in range(m):
        step = 1 << bit
        for mask in range(1 << m):
            if mask & step:
                table[mask] += table[mask ^ step]
    return table


def _server_sum_table(mu_ints: Sequence[int]) -> list:
    m = len(mu_ints)
    table = [0] * (1 << m)
    for mask in range(1, 1 << m):
        low = mask & -mask
        table[mask] = table[mask ^ low] + mu_ints[low.bit_length() - 1]
    return table


def stability_check(menu: Menu, lam: Sequence, mu: Sequence) -> bool:
    """True iff every nonempty server subset has strictly positive slack at
    the given (realized) arrival rates.  Exhaustive over all 2^m subsets."""
    if len(lam) != menu.n:
        raise DimensionMismatch(f"lambda has {len(lam)} entries, expected {menu.n}")
    if len(mu) != menu.m:
        raise DimensionMismatch(f"mu has {len(mu)} entries, expected {menu.m}")
    _check_subset_cap(menu.m)
    lam = [as_rational(v) for v in lam]
    if any(v < 0 for v in lam):
        raise ParseError("arrival rates must be nonnegative")
    mu = [as_rational(v) for v in mu]
    lam_ints, mu_ints = _scaled_ints(lam, mu)
    lam_table = _unique_load_table(menu, lam_ints)
    mu_table = _server_sum_table(mu_ints)
    if lam_table[0] > 0:
        return False  # some class with positive rate has no compatible server
    return all(mu_table[mask] > lam_table[mask] for mask in range(1, 1 << menu.m))


@dataclass(frozen=True)
class AdmissibilityResult:
    admissible: bool
    violating_servers: Optional[tuple] = None
    limit_deficit: Optional[Fraction] = None
    subset_gamma: Optional[Fraction] = None

    def __bool__(self):
        return self.admissible

    @property
    def reason(self) -> str:
        if self.admissible:
            return "admissible"
        servers = "{" + ", ".join(str(j + 1) for j in self.violating_servers) + "}"
        if self.limit_deficit != 0:
            return (
                f"server subset {servers} is overloaded in the limit: "
                f"capacity minus demand = {self.limit_deficit}"
            )
        return (
            f"server subset {servers} is critically loaded with non-positive "
            f"slack direction {self.subset_gamma}"
        )


def admissibility_check(instance: Instance) -> AdmissibilityResult:
    """Classify every server subset S: either its limiting demand is strictly
    below capacity, or it is critically loaded and the slack direction of the
    classes it uniquely serves is strictly positive.  Either way the prelimit
    slack of S stays of order epsilon.  Reports the smallest violating subset
    (by size, then lexicographically) if there is one."""
    menu = instance.menu
    _check_subset_cap(menu.m)
    Lambda_ints, gamma_ints, mu_ints = _scaled_ints(
        list(instance.path.Lambda), list(instance.path.gamma), list(instance.rates.mu)
    )
    Lambda_table = _unique_load_table(menu, Lambda_ints)
    gamma_table = _unique_load_table(menu, gamma_ints)
    mu_table = _server_sum_table(mu_ints)

    has_orphan_class = any(menu.row_mask(i) == 0 for i in range(menu.n))
    m = menu.m
    for size in range(0 if has_orphan_class else 1, m + 1):
        for subset in combinations(range(m), size):
            mask = server_mask(subset, m)
            deficit = mu_table[mask] - Lambda_table[mask]
            if deficit > 0:
                continue
            if deficit == 0 and gamma_table[mask] > 0:
                continue
            scale = instance.rates.mu[0] / mu_ints[0]  # mu > 0, so this is well defined
            return AdmissibilityResult(
                admissible=False,
                violating_servers=subset,
                limit_deficit=deficit * scale,
                subset_gamma=gamma_table[mask] * scale,
            )
    return AdmissibilityResult(admissible=True)
