"""Discrete-event simulation of FCFS-ALIS routing.

Customers of class i arrive Poisson at rate lambda_i(eps) and wait in a
single global FCFS line; servers work at exponential rates.  A server that
frees up takes the oldest waiting customer it is compatible with; an arrival
that finds compatible idle servers is assigned to the one idle the longest.
Waiting time is measured from arrival to service start.

Estimates come from batch means: the post-warmup arrivals are split into
equal-count batches, each replication contributes its batches, and 95%
confidence intervals use the t distribution on the pooled batch means.
Replications are independent and may run in parallel processes; every random
stream is a counter-based Philox generator keyed by (seed, replication,
role), so results are reproducible regardless of scheduling.
"""

from __future__ import annotations

import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import partial

import numpy as np

from .errors import InvalidConfig, UnstableDetected, UnstableInstance
from .model import ArrivalPath, Instance, as_rational, stability_check

_BLOCK = 1 << 14
_INF = math.inf

# two-sided 95% t quantiles for df = 1..30
_T95 = (
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
    2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
)


def _t_quantile(df: int) -> float:
    if df < 1:
        return _INF
    if df <= 30:
        return _T95[df - 1]
    if df <= 40:
        return 2.021
    if df <= 60:
        return 2.000
    if df <= 120:
        return 1.980
    return 1.960


def thread_cap() -> int:
    """Parallelism limit: BQHT_THREADS if set, else the cpu count."""
    raw = os.environ.get("BQHT_THREADS")
    if raw:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise InvalidConfig(f"BQHT_THREADS must be an integer, got {raw!r}") from exc
        if cap < 1:
            raise InvalidConfig(f"BQHT_THREADS must be >= 1, got {cap}")
        return cap
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SimConfig:
    """Simulation request: how many arrivals to generate and how to batch.

    horizon counts arrivals per replication; the processed event count is
    about twice that (each customer also completes service).
    """

    instance: Instance
    horizon: int
    warmup_fraction: float = 0.2
    batches: int = 20
    replications: int = 1
    seed: int = 0
    collect_events: int = 0
    max_queue: int = 1_000_000

    def __post_init__(self):
        if self.instance.epsilon is None:
            raise InvalidConfig("simulation instance must carry an epsilon")
        if self.horizon < 1:
            raise InvalidConfig(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise InvalidConfig(
                f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction}"
            )
        if self.batches < 2:
            raise InvalidConfig(f"need at least 2 batches, got {self.batches}")
        if self.replications < 1:
            raise InvalidConfig(f"replications must be >= 1, got {self.replications}")
        if self.collect_events < 0:
            raise InvalidConfig("collect_events must be >= 0")
        if self.max_queue < 1:
            raise InvalidConfig("max_queue must be >= 1")
        warm = int(self.horizon * self.warmup_fraction)
        if self.horizon - warm < self.batches:
            raise InvalidConfig(
                f"horizon {self.horizon} leaves fewer post-warmup arrivals "
                f"than the {self.batches} batches need"
            )


@dataclass(frozen=True)
class SimEstimate:
    """Point estimates with 95% confidence intervals from batch means."""

    mean_wait: tuple  # per class
    wait_ci: tuple  # per class (lo, hi)
    served: tuple  # per class, post-warmup service starts
    match_count: tuple  # n x m integer counts
    match_prob: tuple  # n x m, rows over served customers
    match_prob_ci: tuple  # n x m of (lo, hi)
    utilization: tuple  # per server busy fraction of the measured window
    window_time: float  # measured virtual time, summed over replications
    replications: int
    horizon: int
    events: tuple = None  # optional capped audit log from replication 0

    def to_dict(self) -> dict:
        return {
            "mean_wait": list(self.mean_wait),
            "wait_ci": [list(ci) for ci in self.wait_ci],
            "served": list(self.served),
            "match_count": [list(row) for row in self.match_count],
            "match_prob": [list(row) for row in self.match_prob],
            "match_prob_ci": [[list(ci) for ci in row] for row in self.match_prob_ci],
            "utilization": list(self.utilization),
            "window_time": self.window_time,
            "replications": self.replications,
            "horizon": self.horizon,
        }


def _philox(seed: int, replication: int, role: int) -> np.random.Generator:
    key = np.array(
        [seed & 0xFFFFFFFFFFFFFFFF, ((replication & 0xFFFFFFFF) << 32) | role],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def _run_replication(config: SimConfig, rep: int) -> dict:
    inst = config.instance
    n, m = inst.n, inst.m
    lam = [float(v) for v in inst.lambda_at(inst.epsilon)]
    mu = [float(v) for v in inst.rates.mu]
    servers_of = [inst.menu.servers_of(i) for i in range(n)]
    classes_of = [inst.menu.classes_of(j) for j in range(m)]
    horizon = config.horizon
    warm = int(horizon * config.warmup_fraction)
    span = horizon - warm
    nbatch = config.batches
    maxq = config.max_queue

    agen = [_philox(config.seed, rep, i) if lam[i] > 0 else None for i in range(n)]
    sgen = [_philox(config.seed, rep, n + j) for j in range(m)]
    ascale = [1.0 / lam[i] if lam[i] > 0 else 0.0 for i in range(n)]
    sscale = [1.0 / mu[j] for j in range(m)]
    abuf = [agen[i].exponential(ascale[i], _BLOCK).tolist() if agen[i] else None for i in range(n)]
    sbuf = [sgen[j].exponential(sscale[j], _BLOCK).tolist() for j in range(m)]
    apos = [0] * n
    spos = [0] * m
    next_arr = [_INF] * n
    for i in range(n):
        if abuf[i] is not None:
            next_arr[i] = abuf[i][0]
            apos[i] = 1

    comp = [_INF] * m  # completion time of the running service
    cur = [-1] * m  # class in service
    sstart = [0.0] * m
    idle_since = [0.0] * m
    queues = [deque() for _ in range(n)]
    qsize = 0
    arrived = 0
    wstart = None  # time the measurement window opens
    tend = None  # time of the last arrival

    bw_sum = [[0.0] * n for _ in range(nbatch)]
    bw_cnt = [[0] * n for _ in range(nbatch)]
    bmatch = [[0] * (n * m) for _ in range(nbatch)]
    tw_sum = [0.0] * n
    tserved = [0] * n
    tmatch = [0] * (n * m)
    busy_time = [0.0] * m
    events = [] if (rep == 0 and config.collect_events) else None
    ev_cap = config.collect_events

    while True:
        ta = _INF
        ia = -1
        if arrived < horizon:
            for i in range(n):
                v = next_arr[i]
                if v < ta:
                    ta = v
                    ia = i
        tc = _INF
        jc = -1
        for j in range(m):
            v = comp[j]
            if v < tc:
                tc = v
                jc = j
        if ta <= tc:
            if ia < 0:
                break  # no arrivals left and every server drained
            t = ta
            i = ia
            k = arrived
            arrived = k + 1
            if k >= warm:
                if wstart is None:
                    wstart = t
                b = (k - warm) * nbatch // span
            else:
                b = -1
            if arrived == horizon:
                tend = t
            p = apos[i]
            if p == _BLOCK:
                abuf[i] = agen[i].exponential(ascale[i], _BLOCK).tolist()
                p = 0
            next_arr[i] = t + abuf[i][p]
            apos[i] = p + 1
            if events is not None and len(events) < ev_cap:
                events.append(("arrival", t, i))
            best = -1
            best_t = _INF
            for j in servers_of[i]:
                if comp[j] == _INF and idle_since[j] < best_t:
                    best_t = idle_since[j]
                    best = j
            if best >= 0:
                j = best
                if events is not None and len(events) < ev_cap:
                    snapshot = tuple(
                        (jj, idle_since[jj]) for jj in servers_of[i] if comp[jj] == _INF
                    )
                    events.append(("start", t, i, j, t, snapshot))
                if b >= 0:
                    bw_cnt[b][i] += 1
                    bmatch[b][i * m + j] += 1
                    tserved[i] += 1
                    tmatch[i * m + j] += 1
                p = spos[j]
                if p == _BLOCK:
                    sbuf[j] = sgen[j].exponential(sscale[j], _BLOCK).tolist()
                    p = 0
                comp[j] = t + sbuf[j][p]
                spos[j] = p + 1
                cur[j] = i
                sstart[j] = t
            else:
                queues[i].append((t, b))
                qsize += 1
                if qsize > maxq:
                    raise UnstableDetected(
                        f"queue exceeded the safety bound of {maxq} customers "
                        f"at virtual time {t:.6g}"
                    )
        else:
            t = tc
            j = jc
            i0 = cur[j]
            if wstart is not None:
                hi = t if tend is None or t < tend else tend
                lo = sstart[j] if sstart[j] > wstart else wstart
                if hi > lo:
                    busy_time[j] += hi - lo
            if events is not None and len(events) < ev_cap:
                events.append(("complete", t, i0, j))
            bi = -1
            best_t = _INF
            for i in classes_of[j]:
                qi = queues[i]
                if qi and qi[0][0] < best_t:
                    best_t = qi[0][0]
                    bi = i
            if bi >= 0:
                t0, b0 = queues[bi].popleft()
                qsize -= 1
                if events is not None and len(events) < ev_cap:
                    events.append(("start", t, bi, j, t0, None))
                if b0 >= 0:
                    w = t - t0
                    bw_sum[b0][bi] += w
                    bw_cnt[b0][bi] += 1
                    bmatch[b0][bi * m + j] += 1
                    tw_sum[bi] += w
                    tserved[bi] += 1
                    tmatch[bi * m + j] += 1
                p = spos[j]
                if p == _BLOCK:
                    sbuf[j] = sgen[j].exponential(sscale[j], _BLOCK).tolist()
                    p = 0
                comp[j] = t + sbuf[j][p]
                spos[j] = p + 1
                cur[j] = bi
                sstart[j] = t
            else:
                comp[j] = _INF
                cur[j] = -1
                idle_since[j] = t

    return {
        "bw_sum": bw_sum,
        "bw_cnt": bw_cnt,
        "bmatch": bmatch,
        "tw_sum": tw_sum,
        "tserved": tserved,
        "tmatch": tmatch,
        "busy_time": busy_time,
        "window": (tend - wstart) if (tend is not None and wstart is not None) else 0.0,
        "events": events,
    }


def _batch_ci(values) -> tuple:
    if not values:
        return (0.0, 0.0)
    mean = math.fsum(values) / len(values)
    if len(values) < 2:
        return (-_INF, _INF)
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    half = _t_quantile(len(values) - 1) * math.sqrt(var / len(values))
    return (mean - half, mean + half)


def simulate(config: SimConfig) -> SimEstimate:
    """Run the replications (in parallel when allowed) and pool the batch
    means into waits, matching probabilities, and utilizations with 95%
    confidence intervals."""
    inst = config.instance
    lam = inst.lambda_at(inst.epsilon)
    if not stability_check(inst.menu, lam, inst.rates.mu):
        raise UnstableInstance(
            f"instance is not stable at epsilon = {inst.epsilon}; simulation would diverge"
        )
    n, m = inst.n, inst.m
    workers = min(config.replications, thread_cap())
    if workers <= 1:
        results = [_run_replication(config, rep) for rep in range(config.replications)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(partial(_run_replication, config), range(config.replications))
            )

    tserved = [0] * n
    tw_sum = [0.0] * n
    tmatch = [0] * (n * m)
    busy = [0.0] * m
    window = 0.0
    for res in results:
        for i in range(n):
            tserved[i] += res["tserved"][i]
            tw_sum[i] += res["tw_sum"][i]
        for a in range(n * m):
            tmatch[a] += res["tmatch"][a]
        for j in range(m):
            busy[j] += res["busy_time"][j]
        window += res["window"]

    mean_wait = tuple(
        tw_sum[i] / tserved[i] if tserved[i] else 0.0 for i in range(n)
    )
    wait_ci = []
    for i in range(n):
        values = [
            res["bw_sum"][b][i] / res["bw_cnt"][b][i]
            for res in results
            for b in range(config.batches)
            if res["bw_cnt"][b][i]
        ]
        wait_ci.append(_batch_ci(values))

    match_count = tuple(
        tuple(tmatch[i * m + j] for j in range(m)) for i in range(n)
    )
    match_prob = tuple(
        tuple(
            tmatch[i * m + j] / tserved[i] if tserved[i] else 0.0 for j in range(m)
        )
        for i in range(n)
    )
    match_ci = []
    for i in range(n):
        row = []
        for j in range(m):
            values = [
                res["bmatch"][b][i * m + j] / res["bw_cnt"][b][i]
                for res in results
                for b in range(config.batches)
                if res["bw_cnt"][b][i]
            ]
            row.append(_batch_ci(values))
        match_ci.append(tuple(row))

    for i in range(n):
        if tserved[i]:
            assert abs(math.fsum(match_prob[i]) - 1.0) < 1e-9

    utilization = tuple(
        min(busy[j] / window, 1.0) if window > 0 else 0.0 for j in range(m)
    )
    events = results[0]["events"]
    return SimEstimate(
        mean_wait=mean_wait,
        wait_ci=tuple(wait_ci),
        served=tuple(tserved),
        match_count=match_count,
        match_prob=match_prob,
        match_prob_ci=tuple(match_ci),
        utilization=utilization,
        window_time=window,
        replications=config.replications,
        horizon=config.horizon,
        events=tuple(events) if events is not None else None,
    )


def _overlap(a: tuple, b: tuple) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


@dataclass(frozen=True)
class GammaInvarianceVerdict:
    invariant: bool
    estimate_a: SimEstimate
    estimate_b: SimEstimate
    disagreements: tuple  # arcs whose confidence intervals do not overlap

    def __bool__(self) -> bool:
        return self.invariant


def matching_gamma_invariance_test(
    instance: Instance, gamma_a, gamma_b, epsilon, config: SimConfig
) -> GammaInvarianceVerdict:
    """Simulate the same limiting instance under two slack directions and
    check that every arc's matching probability intervals overlap; waits may
    move, matching must not."""
    eps = as_rational(epsilon)
    inst_a = Instance(instance.menu, instance.rates, ArrivalPath.of(instance.path.Lambda, gamma_a), eps)
    inst_b = Instance(instance.menu, instance.rates, ArrivalPath.of(instance.path.Lambda, gamma_b), eps)
    est_a = simulate(replace(config, instance=inst_a))
    est_b = simulate(replace(config, instance=inst_b, seed=config.seed + 1))
    bad = []
    for i, j in instance.menu.arcs():
        if est_a.served[i] == 0 or est_b.served[i] == 0:
            continue
        if not _overlap(est_a.match_prob_ci[i][j], est_b.match_prob_ci[i][j]):
            bad.append((i, j))
    return GammaInvarianceVerdict(not bad, est_a, est_b, tuple(bad))
