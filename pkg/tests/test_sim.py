"""Simulator checks: closed-form queues, agreement with the exact product
form, discipline invariants from the event log, and gamma-direction effects
on matching."""

import math
from fractions import Fraction

import pytest

from bqht.errors import InvalidConfig, UnstableDetected, UnstableInstance
from bqht.model import make_instance
from bqht.oracle import exact_waits
from bqht.sim import (
    SimConfig,
    _t_quantile,
    matching_gamma_invariance_test,
    simulate,
    thread_cap,
)

from conftest import example_a, fig_ex2


def mm1(eps="1/10"):
    return make_instance([[1]], [1], [1], [1], epsilon=eps)


def contains(ci, value):
    lo, hi = ci
    return lo <= value <= hi


class TestThreadCap:
    def test_defaults_to_cpu_count(self, monkeypatch):
        monkeypatch.delenv("BQHT_THREADS", raising=False)
        assert thread_cap() >= 1

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("BQHT_THREADS", "3")
        assert thread_cap() == 3

    def test_rejects_garbage(self, monkeypatch):
        monkeypatch.setenv("BQHT_THREADS", "many")
        with pytest.raises(InvalidConfig):
            thread_cap()

    def test_rejects_nonpositive(self, monkeypatch):
        monkeypatch.setenv("BQHT_THREADS", "0")
        with pytest.raises(InvalidConfig):
            thread_cap()


class TestSimConfig:
    def test_valid(self):
        cfg = SimConfig(mm1(), horizon=1000)
        assert cfg.batches == 20 and cfg.seed == 0

    def test_requires_epsilon(self):
        inst = make_instance([[1]], [1], [1], [1])
        with pytest.raises(InvalidConfig):
            SimConfig(inst, horizon=1000)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"horizon": 0},
            {"horizon": 1000, "warmup_fraction": 1.0},
            {"horizon": 1000, "warmup_fraction": -0.1},
            {"horizon": 1000, "batches": 1},
            {"horizon": 1000, "replications": 0},
            {"horizon": 1000, "collect_events": -1},
            {"horizon": 1000, "max_queue": 0},
            # 20 post-warmup arrivals cannot fill 30 batches
            {"horizon": 25, "warmup_fraction": 0.2, "batches": 30},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(InvalidConfig):
            SimConfig(mm1(), **kwargs)


class TestTQuantile:
    def test_table_values(self):
        assert _t_quantile(1) == 12.706
        assert _t_quantile(5) == 2.571
        assert _t_quantile(30) == 2.042

    def test_tail(self):
        assert _t_quantile(35) == 2.021
        assert _t_quantile(500) == 1.960

    def test_degenerate(self):
        assert _t_quantile(0) == math.inf


class TestClosedForms:
    def test_mm1_wait(self):
        # lambda = 0.9, mu = 1: Wq = rho / (mu - lambda) = 9
        est = simulate(SimConfig(mm1(), horizon=200_000, seed=42))
        assert contains(est.wait_ci[0], 9.0)
        assert abs(est.mean_wait[0] - 9.0) / 9.0 < 0.15
        assert abs(est.utilization[0] - 0.9) < 0.02
        assert est.match_prob == ((1.0,),)

    def test_mm2_wait(self):
        # two identical servers fed by one class at lambda = 1.9
        inst = make_instance([[1, 1]], [1, 1], [2], [1], epsilon="1/10")
        lam, c = 1.9, 2
        p_block = (lam**c / math.factorial(c)) / (
            (1 - lam / c) * sum(lam**k / math.factorial(k) for k in range(c))
            + lam**c / math.factorial(c)
        )
        wq = p_block / (c - lam)
        est = simulate(SimConfig(inst, horizon=300_000, seed=11))
        assert contains(est.wait_ci[0], wq)
        # both servers carry the same load and split the work evenly
        assert abs(est.utilization[0] - est.utilization[1]) < 0.02
        assert abs(est.match_prob[0][0] - 0.5) < 0.02

    def test_example_a_matches_product_form(self):
        inst = example_a(epsilon="1/10")
        exact = exact_waits(inst).class_waits
        est = simulate(SimConfig(inst, horizon=1_200_000, seed=0))
        for i in range(4):
            assert contains(est.wait_ci[i], exact[i]), (i, est.wait_ci[i], exact[i])


class TestMatchingCounts:
    def test_dedicated_pair_is_identity(self):
        inst = make_instance([[1, 0], [0, 1]], [1, 1], [1, 1], [1, 1], epsilon="1/10")
        est = simulate(SimConfig(inst, horizon=20_000, seed=5))
        assert est.match_prob[0] == (1.0, 0.0)
        assert est.match_prob[1] == (0.0, 1.0)

    def test_off_menu_arcs_stay_empty(self):
        inst = example_a(epsilon="1/10")
        est = simulate(SimConfig(inst, horizon=50_000, seed=2))
        for i in range(inst.n):
            for j in range(inst.m):
                if not inst.menu.rows[i][j]:
                    assert est.match_count[i][j] == 0
        # every menu arc of this instance sees traffic at this horizon
        for i, j in inst.menu.arcs():
            assert est.match_count[i][j] > 0

    def test_rows_sum_to_served(self):
        est = simulate(SimConfig(fig_ex2(epsilon="1/10"), horizon=60_000, seed=9))
        for i in range(4):
            assert sum(est.match_count[i]) == est.served[i]
            assert abs(math.fsum(est.match_prob[i]) - 1.0) < 1e-12


class TestEventLog:
    def run_logged(self, horizon=30_000, cap=200_000):
        cfg = SimConfig(
            example_a(epsilon="1/10"), horizon=horizon, seed=7, collect_events=cap
        )
        return simulate(cfg).events

    def test_absent_by_default(self):
        est = simulate(SimConfig(mm1(), horizon=1_000, seed=1))
        assert est.events is None

    def test_cap_respected(self):
        cfg = SimConfig(mm1(), horizon=5_000, seed=1, collect_events=100)
        est = simulate(cfg)
        assert len(est.events) == 100

    def test_fcfs_within_class(self):
        # service starts must consume each class queue in arrival order
        events = self.run_logged()
        last = {}
        starts = 0
        for ev in events:
            if ev[0] != "start":
                continue
            starts += 1
            _, t, i, j, arr_t, _ = ev
            assert t >= arr_t
            assert arr_t >= last.get(i, 0.0)
            last[i] = arr_t
        assert starts > 1000

    def test_alis_picks_longest_idle(self):
        # arrivals finding idle servers must take the one idle the longest
        events = self.run_logged()
        checked = 0
        for ev in events:
            if ev[0] != "start" or ev[5] is None:
                continue
            _, t, i, j, arr_t, snapshot = ev
            chosen = dict(snapshot)[j]
            assert chosen == min(idle for _, idle in snapshot)
            checked += 1
        assert checked > 100

    def test_server_alternates_start_complete(self):
        events = self.run_logged()
        busy = {}
        for ev in events:
            if ev[0] == "start":
                j = ev[3]
                assert not busy.get(j, False)
                busy[j] = True
            elif ev[0] == "complete":
                j = ev[3]
                assert busy.get(j, False)
                busy[j] = False


class TestFlowBalance:
    def test_throughput_matches_rates(self):
        inst = example_a(epsilon="1/10")
        est = simulate(SimConfig(inst, horizon=400_000, seed=1))
        window = est.window_time
        lam = [float(v) for v in inst.lambda_at(inst.epsilon)]
        # each server's completion rate is its speed times its busy fraction
        for j in range(inst.m):
            rate = sum(est.match_count[i][j] for i in range(inst.n)) / window
            target = float(inst.rates.mu[j]) * est.utilization[j]
            assert abs(rate - target) / target < 0.015, (j, rate, target)
        # everything that arrives gets served
        total_rate = sum(est.served) / window
        assert abs(total_rate - sum(lam)) / sum(lam) < 0.01


class TestReproducibility:
    def test_same_seed_same_estimate(self):
        cfg = SimConfig(example_a(epsilon="1/10"), horizon=20_000, seed=13)
        assert simulate(cfg) == simulate(cfg)

    def test_seed_changes_result(self):
        a = simulate(SimConfig(mm1(), horizon=20_000, seed=1))
        b = simulate(SimConfig(mm1(), horizon=20_000, seed=2))
        assert a.mean_wait != b.mean_wait

    def test_parallel_matches_serial(self, monkeypatch):
        cfg = SimConfig(example_a(epsilon="1/10"), horizon=15_000, replications=2, seed=3)
        monkeypatch.setenv("BQHT_THREADS", "1")
        serial = simulate(cfg)
        monkeypatch.setenv("BQHT_THREADS", "2")
        parallel = simulate(cfg)
        assert serial == parallel

    def test_replications_pool_batches(self):
        one = simulate(SimConfig(mm1(), horizon=40_000, replications=1, seed=4))
        four = simulate(SimConfig(mm1(), horizon=40_000, replications=4, seed=4))
        assert sum(four.served) > 3 * sum(one.served)
        width = lambda ci: ci[1] - ci[0]
        assert width(four.wait_ci[0]) < width(one.wait_ci[0])


class TestInstability:
    def test_unstable_instance_refused(self):
        # class 2 arrives at 1 + eps but its only server serves at rate 1
        inst = make_instance(
            [[1, 0], [0, 1]], [1, 1], [1, 1], [2, -1], epsilon="1/10"
        )
        with pytest.raises(UnstableInstance):
            simulate(SimConfig(inst, horizon=1_000))

    def test_queue_bound_trips(self):
        # stable but in heavy traffic: backlogs of O(1/eps) exceed a tiny cap
        cfg = SimConfig(fig_ex2(epsilon="1/100"), horizon=200_000, seed=0, max_queue=50)
        with pytest.raises(UnstableDetected):
            simulate(cfg)


class TestGammaInvariance:
    def test_identical_directions_agree(self):
        inst = example_a()
        cfg = SimConfig(example_a(epsilon="1/10"), horizon=30_000, seed=0)
        verdict = matching_gamma_invariance_test(
            inst, [2, 1, 1, 2], [2, 1, 1, 2], "1/10", cfg
        )
        assert verdict
        assert verdict.disagreements == ()

    def test_dedicated_matching_ignores_gamma(self):
        # waits shift with the slack direction, matching cannot move at all
        inst = make_instance([[1, 0], [0, 1]], [1, 1], [1, 1], [1, 1])
        cfg = SimConfig(mm1(), horizon=20_000, seed=0)
        verdict = matching_gamma_invariance_test(inst, [1, 1], [1, 3], "1/10", cfg)
        assert verdict.invariant
        assert verdict.estimate_a.match_prob[0] == (1.0, 0.0)
        assert verdict.estimate_b.match_prob[1] == (0.0, 1.0)
        assert verdict.estimate_b.mean_wait[1] < verdict.estimate_a.mean_wait[1]

    def test_prelimit_directions_differ(self):
        # away from the limit the two slack directions route differently;
        # invariance only holds as eps -> 0 (see the convergence test below)
        inst = example_a()
        cfg = SimConfig(
            example_a(epsilon="1/20"), horizon=250_000, replications=2, seed=0
        )
        verdict = matching_gamma_invariance_test(
            inst, [2, 1, 1, 2], [9, 9, -3, -9], "1/20", cfg
        )
        assert not verdict.invariant
        assert any(i == 3 for i, _ in verdict.disagreements)

    def test_gap_closes_as_eps_shrinks(self):
        inst = example_a()
        gaps = []
        for eps in (Fraction(1, 20), Fraction(1, 200)):
            cfg = SimConfig(example_a(epsilon=eps), horizon=200_000, seed=0)
            v = matching_gamma_invariance_test(
                inst, [2, 1, 1, 2], [9, 9, -3, -9], eps, cfg
            )
            row_a = v.estimate_a.match_prob[3]
            row_b = v.estimate_b.match_prob[3]
            gaps.append(max(abs(a - b) for a, b in zip(row_a, row_b)))
        assert gaps[1] < gaps[0] / 2
