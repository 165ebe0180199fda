"""Product-form state enumeration: exact prelimit waits and their agreement
with the scaled-wait limits."""

import math
from fractions import Fraction
from itertools import permutations

import pytest

from bqht.errors import ParseError, StructuralZero, TooLarge, UnstableInstance
from bqht.model import admissibility_check, make_instance, slack
from bqht.oracle import (
    OracleReport,
    aggregate_state_prob,
    critical_subsets,
    exact_waits,
    induced_all_busy,
    induced_state_limits,
    limit_consistency_sweep,
    noninduced_mass,
)
from bqht.structure import decompose, topological_orders
from bqht.waits import component_waits

from conftest import example_a, fig_ex2, random_instance


def mm1(lam="9/10", mu=1, eps="1/10"):
    # single queue entering heavy traffic along lambda(eps) = 1 - eps
    return make_instance([[1]], [mu], [mu], [1], epsilon=eps)


class TestAggregateStateProb:
    def test_mm1_busy(self):
        inst = mm1()
        assert aggregate_state_prob(inst, (0,), 1) == Fraction(10)

    def test_mm1_idle(self):
        inst = mm1()
        assert aggregate_state_prob(inst, (0,), 0) == Fraction(10, 9)

    def test_example_a_all_busy_is_prefix_slack_product(self):
        inst = example_a(epsilon="1/10")
        s = (0, 1, 2, 3)
        expected = Fraction(1)
        for ell in range(1, 5):
            expected /= slack(inst, s[:ell], inst.epsilon)
        assert aggregate_state_prob(inst, s, 4) == expected

    def test_rejects_bad_permutation_and_busy_count(self):
        inst = example_a(epsilon="1/10")
        with pytest.raises(ParseError):
            aggregate_state_prob(inst, (0, 1, 2, 2), 4)
        with pytest.raises(ParseError):
            aggregate_state_prob(inst, (0, 1, 2, 3), 5)

    def test_requires_epsilon(self):
        with pytest.raises(ParseError):
            aggregate_state_prob(example_a(), (0, 1, 2, 3), 4)

    def test_explicit_epsilon_argument(self):
        value = aggregate_state_prob(example_a(), (0, 1, 2, 3), 4, at_epsilon="1/10")
        assert value == aggregate_state_prob(example_a(epsilon="1/10"), (0, 1, 2, 3), 4)

    def test_structural_zero_raised(self):
        # server 2 is reachable only by a class that never arrives, so any
        # state ranking it idle behind everything has probability zero
        inst = make_instance(
            [[1, 0], [0, 1]], ["3/4", "1/4"], [1, 0], [1, 0], epsilon="1/2"
        )
        with pytest.raises(StructuralZero):
            aggregate_state_prob(inst, (0, 1), 1)
        # with both servers busy there is no idle suffix to hit the zero
        assert aggregate_state_prob(inst, (0, 1), 2) == Fraction(1, Fraction(1, 4) * Fraction(1, 2))

    def test_unstable_prefix_raises(self):
        inst = make_instance(
            [[1, 0], [0, 1]], [1, 1], [1, 1], [2, -1], epsilon="1/10"
        )
        with pytest.raises(UnstableInstance):
            aggregate_state_prob(inst, (1, 0), 1)

    def test_size_cap(self):
        inst = make_instance([[1] * 8], [1] * 8, [8], [1], epsilon="1/10")
        with pytest.raises(TooLarge):
            aggregate_state_prob(inst, tuple(range(8)), 8)


class TestExactWaits:
    def test_mm1_classical_wait(self):
        report = exact_waits(mm1())
        assert report.class_waits[0] == pytest.approx(9.0, abs=1e-9)
        assert report.scaled_waits[0] == pytest.approx(0.9, abs=1e-10)

    def test_probabilities_sum_to_one(self):
        for inst in (example_a(epsilon="1/10"), fig_ex2(epsilon="1/20")):
            report = exact_waits(inst)
            assert report.total_mass() == pytest.approx(1.0, abs=1e-10)

    def test_state_probs_match_single_state_formula(self):
        inst = example_a(epsilon="1/10")
        report = exact_waits(inst)
        for s, b in [((0, 1, 2, 3), 4), ((2, 3, 0, 1), 2), ((3, 1, 2, 0), 0)]:
            expected = float(aggregate_state_prob(inst, s, b)) * report.normalizer
            assert report.state_probs[(s, b)] == pytest.approx(expected, abs=1e-12)

    def test_discussion_table_gamma_equals_lambda(self):
        # scaled waits at the three published epsilons
        table = {
            "1/10": (0.5727, 1.0652, 0.1649, 0.1182),
            "1/20": (0.6171, 1.1151, 0.1651, 0.1408),
            "1/100": (0.6563, 1.1562, 0.1662, 0.1612),
        }
        for eps, row in table.items():
            report = exact_waits(example_a(epsilon=eps))
            for got, want in zip(report.scaled_waits, row):
                assert got == pytest.approx(want, abs=5e-3)

    def test_discussion_table_alternate_gamma(self):
        report = exact_waits(example_a(gamma=[9, 9, -3, -9], epsilon="1/100"))
        for got, want in zip(report.scaled_waits, (0.2678, 0.2677, 0.1670, 0.1613)):
            assert got == pytest.approx(want, abs=5e-3)

    def test_structural_zero_states_carry_no_mass(self):
        inst = make_instance(
            [[1, 0], [0, 1]], ["3/4", "1/4"], [1, 0], [1, 0], epsilon="1/2"
        )
        report = exact_waits(inst)
        assert report.state_probs[((0, 1), 0)] == 0.0
        assert report.state_probs[((0, 1), 1)] == 0.0
        assert report.total_mass() == pytest.approx(1.0, abs=1e-10)

    def test_unstable_raises(self):
        inst = make_instance([[1, 0], [0, 1]], [1, 1], [1, 1], [2, -1], epsilon="1/10")
        with pytest.raises(UnstableInstance):
            exact_waits(inst)

    def test_requires_epsilon_and_cap(self):
        with pytest.raises(ParseError):
            exact_waits(example_a())
        big = make_instance([[1] * 8], [1] * 8, [8], [1], epsilon="1/10")
        with pytest.raises(TooLarge):
            exact_waits(big)

    def test_state_count(self):
        report = exact_waits(example_a(epsilon="1/10"))
        assert len(report.state_probs) == math.factorial(4) * 5


class TestInducedStates:
    def test_example_a_induced_set(self):
        inst = example_a(epsilon="1/10")
        _, components, dag = decompose(inst)
        induced = induced_all_busy(components, topological_orders(dag))
        # components {0},{1},{2,3}; two rankings, servers 2,3 permute freely
        assert induced == {
            (0, 1, 2, 3),
            (0, 1, 3, 2),
            (1, 0, 2, 3),
            (1, 0, 3, 2),
        }

    def test_complete_pooling_induces_all_permutations(self):
        inst = fig_ex2(epsilon="1/10")
        _, components, dag = decompose(inst)
        induced = induced_all_busy(components, topological_orders(dag))
        assert induced == set(permutations(range(4)))

    def test_noninduced_mass_complement(self):
        inst = example_a(epsilon="1/10")
        _, components, dag = decompose(inst)
        induced = induced_all_busy(components, topological_orders(dag))
        report = exact_waits(inst)
        mass = noninduced_mass(report, induced)
        direct = math.fsum(
            p
            for (s, b), p in report.state_probs.items()
            if b < 4 or s not in induced
        )
        assert mass == pytest.approx(direct, abs=1e-12)
        assert 0.0 < mass < 1.0


class TestLimitConsistencySweep:
    def test_example_a_mass_and_gaps_decrease(self):
        table = limit_consistency_sweep(
            example_a(), [Fraction(1, 10), Fraction(1, 20), Fraction(1, 100)]
        )
        assert table.mass_decreasing
        masses = [row.noninduced_mass for row in table.rows]
        assert masses[0] > masses[1] > masses[2] > 0
        for lw, want in zip(table.limit_waits, (2 / 3, 7 / 6, 1 / 6, 1 / 6)):
            assert lw == pytest.approx(want, abs=1e-12)
        # every class's gap to its limit shrinks as epsilon does
        for i in range(4):
            gaps = [abs(row.scaled_waits[i] - table.limit_waits[i]) for row in table.rows]
            assert gaps[0] > gaps[1] > gaps[2]

    def test_complete_pooling_busy_mass_concentrates(self):
        table = limit_consistency_sweep(fig_ex2(), ["1/10", "1/100"])
        assert table.rows[0].noninduced_mass > table.rows[1].noninduced_mass
        # with every permutation induced, the leftover is exactly P(b < m)
        assert table.rows[1].noninduced_mass < 0.2
        for lw in table.limit_waits:
            assert lw == pytest.approx(0.25, abs=1e-12)

    def test_eps_list_validation(self):
        for bad in ([], ["1/10", "1/10"], ["1/100", "1/10"], ["1/10", 0]):
            with pytest.raises(ParseError):
                limit_consistency_sweep(example_a(), bad)

    def test_propagates_unstable(self):
        inst = make_instance([[1, 0], [0, 1]], [1, 1], [1, 1], [2, -1])
        with pytest.raises(UnstableInstance):
            limit_consistency_sweep(inst, ["1/10", "1/100"])


class TestInducedStateLimits:
    def test_limits_sum_to_one_exactly(self):
        for inst in (example_a(), fig_ex2(), example_a(gamma=[9, 9, -3, -9])):
            limits = induced_state_limits(inst)
            assert sum(limits.values(), Fraction(0)) == 1

    def test_limit_support_matches_induced_set(self):
        inst = example_a()
        _, components, dag = decompose(inst)
        induced = induced_all_busy(components, topological_orders(dag))
        assert set(induced_state_limits(inst)) == induced

    def test_oracle_converges_to_predicted_limits(self):
        inst = example_a()
        limits = {s: float(v) for s, v in induced_state_limits(inst).items()}
        errs = []
        for eps in (Fraction(1, 20), Fraction(1, 1000)):
            report = exact_waits(inst.with_epsilon(eps))
            errs.append(
                max(abs(report.state_probs[(s, 4)] - limits[s]) for s in limits)
            )
        assert errs[1] < errs[0]
        assert errs[1] < 0.02

    def test_mm1_trivial_limit(self):
        limits = induced_state_limits(mm1())
        assert limits == {(0,): Fraction(1)}


class TestCriticalSubsets:
    def test_example_a_critical_sets(self):
        crit = critical_subsets(example_a())
        assert crit == {
            frozenset({0}),
            frozenset({1}),
            frozenset({0, 1}),
            frozenset({0, 1, 2, 3}),
        }

    def test_critical_sets_are_ranking_prefix_unions(self):
        rng_cases = 0
        import random

        rng = random.Random(20240817)
        while rng_cases < 25:
            inst = random_instance(rng)
            if inst is None or inst.m > 6:
                continue
            if not admissibility_check(inst):
                continue
            try:
                _, components, dag = decompose(inst)
            except Exception:
                continue
            orders = topological_orders(dag)
            prefix_unions = set()
            for order in orders:
                acc = set()
                for k in order.sigma:
                    acc |= set(components[k].servers)
                    prefix_unions.add(frozenset(acc))
            assert critical_subsets(inst) == prefix_unions
            rng_cases += 1

    def test_numeric_slack_ratio_sweep(self):
        # eps / slack converges to a positive limit exactly on critical
        # subsets and to zero elsewhere
        inst = example_a()
        crit = critical_subsets(inst)
        all_subsets = [
            frozenset(c)
            for size in range(1, 5)
            for c in __import__("itertools").combinations(range(4), size)
        ]
        for servers in all_subsets:
            ratios = [
                float(eps / slack(inst, sorted(servers), eps))
                for eps in (Fraction(1, 10), Fraction(1, 100), Fraction(1, 1000))
            ]
            if servers in crit:
                assert ratios[-1] > 0.05
                assert abs(ratios[-1] - ratios[-2]) < abs(ratios[0] - ratios[1]) + 1e-12
            else:
                assert ratios[0] > ratios[1] > ratios[2]
                assert ratios[-1] < 0.05


class TestOracleAgainstWaitModule:
    def test_scaled_waits_approach_mixture_waits(self):
        inst = example_a(gamma=[9, 9, -3, -9])
        _, components, dag = decompose(inst)
        report = component_waits(topological_orders(dag), components)
        limit = [float(report.class_wait[i]) for i in range(4)]
        prev = None
        for eps in (Fraction(1, 10), Fraction(1, 50), Fraction(1, 400)):
            scaled = exact_waits(inst.with_epsilon(eps)).scaled_waits
            gap = max(abs(a - b) for a, b in zip(scaled, limit))
            if prev is not None:
                assert gap < prev
            prev = gap
        assert prev < 0.02
