"""Shared instance builders and hypothesis strategies."""

from fractions import Fraction

from hypothesis import strategies as st

from bqht.model import Instance, Menu, make_instance

# Four classes, three dedicated servers plus one fully flexible class.
EXAMPLE_A_MENU = [
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 1, 0],
    [1, 1, 1, 1],
]
EXAMPLE_A_MU = [2, 1, 2, 1]
EXAMPLE_A_LAMBDA = [2, 1, 1, 2]

# Same menu and capacities, but class 3 has vanishing arrivals.
EXAMPLE_B_LAMBDA = [2, 1, 0, 3]
EXAMPLE_B_GAMMA = [2, 1, -1, 4]


def example_a(gamma=None, epsilon=None) -> Instance:
    return make_instance(
        EXAMPLE_A_MENU,
        EXAMPLE_A_MU,
        EXAMPLE_A_LAMBDA,
        EXAMPLE_A_LAMBDA if gamma is None else gamma,
        epsilon,
    )


def example_b(gamma=None, epsilon=None) -> Instance:
    return make_instance(
        EXAMPLE_A_MENU,
        EXAMPLE_A_MU,
        EXAMPLE_B_LAMBDA,
        EXAMPLE_B_GAMMA if gamma is None else gamma,
        epsilon,
    )


# Three dedicated classes plus a flexible class with zero limiting arrivals.
EXAMPLE_EMPTY_MENU = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 1],
]


def example_empty_class(g1=1, g2=1, g3=1, epsilon=None) -> Instance:
    return make_instance(
        EXAMPLE_EMPTY_MENU,
        [1, 1, 1],
        [1, 1, 1, 0],
        [g1, g2, g3, 0],
        epsilon,
    )


# Three classes each sharing one server with a fully flexible fourth class.
FIG_EX2_MENU = [
    [1, 0, 0, 1],
    [0, 1, 0, 1],
    [0, 0, 1, 1],
    [1, 1, 1, 1],
]


def fig_ex2(epsilon=None) -> Instance:
    return make_instance(FIG_EX2_MENU, [1, 1, 1, 1], [1, 1, 1, 1], [1, 1, 1, 1], epsilon)


def random_instance(rng, max_classes=4, max_servers=4, allow_zero_rows=True):
    """Deterministic random instance from a random.Random; |Lambda| = |mu| and
    the slack-direction sign constraints hold by construction."""
    while True:
        n = rng.randint(1, max_classes)
        m = rng.randint(1, max_servers)
        rows = []
        for _ in range(n):
            if allow_zero_rows and rng.random() < 0.15:
                rows.append([0] * m)
            else:
                row = [rng.randint(0, 1) for _ in range(m)]
                if not any(row):
                    row[rng.randrange(m)] = 1
                rows.append(row)
        for j in range(m):
            if not any(row[j] for row in rows):
                rows[rng.randrange(n)][j] = 1
        zero_rows = [i for i in range(n) if not any(rows[i])]
        Lambda = [
            Fraction(0) if i in zero_rows else Fraction(rng.randint(0, 6), rng.randint(1, 4))
            for i in range(n)
        ]
        total = sum(Lambda)
        if total == 0:
            continue
        weights = [Fraction(rng.randint(1, 5), rng.randint(1, 3)) for _ in range(m)]
        mu = [total * w / sum(weights) for w in weights]
        gamma = [
            Fraction(-rng.randint(0, 3)) if Lambda[i] == 0 else Fraction(rng.randint(-3, 4))
            for i in range(n)
        ]
        if sum(gamma) <= 0:
            continue
        return make_instance(rows, mu, Lambda, gamma)


def small_rationals(min_value=0, max_num=6, max_den=4):
    return st.builds(
        Fraction,
        st.integers(min_value=min_value, max_value=max_num),
        st.integers(min_value=1, max_value=max_den),
    )


@st.composite
def menus(draw, max_classes=5, max_servers=5, allow_zero_rows=False):
    n = draw(st.integers(min_value=1, max_value=max_classes))
    m = draw(st.integers(min_value=1, max_value=max_servers))
    rows = []
    for _ in range(n):
        min_ones = 0 if allow_zero_rows else 1
        ones = draw(
            st.lists(
                st.integers(min_value=0, max_value=m - 1),
                min_size=min_ones,
                max_size=m,
                unique=True,
            )
        )
        rows.append([1 if j in ones else 0 for j in range(m)])
    # every server needs at least one compatible class
    for j in range(m):
        if not any(row[j] for row in rows):
            rows[draw(st.integers(min_value=0, max_value=n - 1))][j] = 1
    return Menu.from_rows(rows)


@st.composite
def instances(draw, max_classes=4, max_servers=4, allow_zero_rows=False):
    """Random instance with |Lambda| = |mu| by construction; admissibility not
    guaranteed, so tests needing it must check and discard."""
    menu = draw(menus(max_classes, max_servers, allow_zero_rows))
    Lambda = []
    for i in range(menu.n):
        if menu.row_mask(i) == 0:
            Lambda.append(Fraction(0))
        else:
            Lambda.append(draw(small_rationals()))
    total = sum(Lambda)
    if total == 0:
        Lambda[0] += 1
        total += 1
        if menu.row_mask(0) == 0:
            return None
    weights = [draw(small_rationals(min_value=1)) for _ in range(menu.m)]
    mu = [total * w / sum(weights) for w in weights]
    gamma = []
    for i in range(menu.n):
        if Lambda[i] == 0:
            gamma.append(draw(small_rationals(min_value=0, max_num=3)) * -1)
        else:
            g = draw(st.integers(min_value=-3, max_value=4))
            gamma.append(Fraction(g))
    if sum(gamma) <= 0:
        return None
    return make_instance([list(r) for r in menu.rows], mu, Lambda, gamma)
