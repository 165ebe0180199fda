"""Command-line front end.

Five commands bind the library into reproducible analyses:

  analyze   decomposition, rankings, and limiting waits of an instance
  exact     exact prelimit waits along a list of epsilons (CSV)
  simulate  discrete-event estimate of waits and matching at one epsilon
  match     limiting matching probabilities (QP, plus vanishing-rate rows)
  design    delay-minimizing menu, or slack synthesis for wait targets

Instances are JSON files following the model module's schema.  Exit codes:
0 ok, 1 malformed input, 2 inadmissible or unstable system, 3 size cap
exceeded, 4 solver failure.  `BQHT_THREADS` caps simulation parallelism.
"""

from __future__ import annotations

import json
import sys
from fractions import Fraction

import click

from . import __version__
from .design import (
    chain_waits,
    find_chain_partition,
    implement_waits_chained,
    min_delay_menu,
)
from .errors import (
    BqhtError,
    InadmissibleInstance,
    ParseError,
    PrefixSlackViolation,
)
from .matching import kkt_verify, qp_matching, serverless_matching
from .model import (
    Instance,
    Menu,
    admissibility_check,
    as_rational,
    instance_from_dict,
    instance_to_dict,
)
from .oracle import limit_consistency_sweep
from .report import (
    RunManifest,
    convergence_figure,
    dag_figure,
    emit_csv,
    emit_json,
    figure_path,
    fnum,
)
from .sim import SimConfig, simulate
from .structure import decompose, topological_orders
from .waits import check_prefix_slacks, component_waits


def _load_instance(path: str) -> Instance:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as err:
        raise ParseError(f"cannot read instance file: {err}") from err
    except json.JSONDecodeError as err:
        raise ParseError(f"instance file is not valid JSON: {err}") from err
    return instance_from_dict(data)


def _manifest(command: str, instance: str, seed=None, **options) -> RunManifest:
    return RunManifest(
        command=command,
        instance=instance,
        options=options,
        version=__version__,
        seed=seed,
    )


def _fail(err: BqhtError):
    click.echo(f"error: {err}", err=True)
    sys.exit(err.exit_code)


def _wait_entry(value) -> dict:
    if isinstance(value, Fraction):
        return {"exact": str(value), "value": fnum(value)}
    return {"value": fnum(value)}


@click.group()
@click.version_option(__version__, prog_name="bqht")
def main():
    """Heavy-traffic analysis of multi-class service systems with a
    compatibility menu, first-come first-served, longest-idle-server
    routing."""


@main.command()
@click.argument("instance_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
              help="Write the JSON report here instead of stdout.")
@click.option("--no-figures", is_flag=True, help="Skip the component-graph figure.")
def analyze(instance_file, output, no_figures):
    """Decomposition, rankings, and limiting waits for an instance."""
    try:
        inst = _load_instance(instance_file)
        check = admissibility_check(inst)
        if not check.admissible:
            if check.limit_deficit == 0:
                # critically loaded subset with a bad slack direction: name
                # the ranking prefix where the aggregated slack fails
                _, _, dag = decompose(inst)
                probe = check_prefix_slacks(topological_orders(dag))
                if not probe.ok:
                    raise PrefixSlackViolation(
                        f"prefix slack through position {probe.position + 1} "
                        f"of ranking {tuple(k + 1 for k in probe.order.sigma)} "
                        "is non-positive",
                        sigma=probe.order.sigma,
                        kappa=probe.position,
                    )
            raise InadmissibleInstance(check.reason, check)
        residual, comps, dag = decompose(inst)
        orders = topological_orders(dag)
        report = component_waits(orders, comps)
        payload = {
            "instance": instance_to_dict(inst),
            "admissible": True,
            "residual_matching": [list(row) for row in residual.rows],
            "components": [
                {
                    "id": k + 1,
                    "classes": [i + 1 for i in sorted(c.classes)],
                    "servers": [j + 1 for j in sorted(c.servers)],
                    "serverless": c.serverless,
                    "Lambda_tilde": c.Lambda_tilde,
                    "gamma_tilde": c.gamma_tilde,
                    "mu_tilde": c.mu_tilde,
                }
                for k, c in enumerate(comps)
            ],
            "dag_edges": [[a + 1, b + 1] for a, b in sorted(dag.arcs)],
            "orders": [
                {
                    "sigma": [k + 1 for k in order.sigma],
                    "q_norm": q,
                }
                for order, q in zip(orders, report.Q_norm)
            ],
            "class_waits": {
                str(i + 1): _wait_entry(report.class_wait[i])
                for i in range(inst.n)
            },
            "component_waits": {
                str(k + 1): _wait_entry(report.component_wait[k])
                for k in range(len(comps))
            },
            "system_average_wait": _wait_entry(report.system_average),
        }
        manifest = _manifest("analyze", instance_file, output=output,
                             no_figures=no_figures)
        text = emit_json(payload, manifest, output)
        if output and not no_figures:
            dag_figure(comps, dag, figure_path(output, "dag"))
        if not output:
            click.echo(text)
    except BqhtError as err:
        _fail(err)


@main.command()
@click.argument("instance_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--eps-list", default=None,
              help="Comma-separated epsilons, e.g. '0.1,0.05,0.01'. "
                   "Defaults to the instance's own epsilon.")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
              help="Write the CSV here instead of stdout.")
@click.option("--no-figures", is_flag=True, help="Skip the convergence figure.")
def exact(instance_file, eps_list, output, no_figures):
    """Exact prelimit waits along a list of epsilons (CSV)."""
    try:
        inst = _load_instance(instance_file)
        if eps_list:
            eps_values = [item.strip() for item in eps_list.split(",") if item.strip()]
        elif inst.epsilon is not None:
            eps_values = [inst.epsilon]
        else:
            raise ParseError("--eps-list is required when the instance has no epsilon")
        sweep = limit_consistency_sweep(inst, eps_values)
        header = ["epsilon", "class", "eps_times_exact_wait", "limit_wait",
                  "noninduced_mass"]
        rows = []
        for row in sweep.rows:
            for i in range(inst.n):
                rows.append([
                    fnum(row.epsilon),
                    i + 1,
                    fnum(row.scaled_waits[i]),
                    fnum(sweep.limit_waits[i]),
                    fnum(row.noninduced_mass),
                ])
        manifest = _manifest("exact", instance_file, eps_list=eps_values,
                             output=output, no_figures=no_figures)
        text = emit_csv(header, rows, manifest, output)
        if output and not no_figures and len(sweep.rows) > 1:
            convergence_figure(sweep, figure_path(output, "convergence"))
        if not output:
            click.echo(text, nl=False)
    except BqhtError as err:
        _fail(err)


@main.command(name="simulate")
@click.argument("instance_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--epsilon", default=None,
              help="Prelimit scale; overrides the instance's epsilon.")
@click.option("--horizon", default=200_000, show_default=True,
              help="Arrivals to simulate per replication.")
@click.option("--replications", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--batches", default=20, show_default=True,
              help="Batch count for the confidence intervals.")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
              help="Write the JSON report here instead of stdout.")
def simulate_cmd(instance_file, epsilon, horizon, replications, seed, batches, output):
    """Discrete-event estimate of waits and matching at one epsilon."""
    try:
        inst = _load_instance(instance_file)
        if epsilon is not None:
            inst = Instance(inst.menu, inst.rates, inst.path, as_rational(epsilon))
        elif inst.epsilon is None:
            raise ParseError("--epsilon is required when the instance has none")
        config = SimConfig(
            instance=inst,
            horizon=horizon,
            replications=replications,
            seed=seed,
            batches=batches,
        )
        estimate = simulate(config)
        payload = {
            "epsilon": inst.epsilon,
            "estimate": estimate.to_dict(),
        }
        manifest = _manifest("simulate", instance_file, seed=seed,
                             epsilon=str(inst.epsilon), horizon=horizon,
                             replications=replications, batches=batches,
                             output=output)
        text = emit_json(payload, manifest, output)
        if not output:
            click.echo(text)
    except BqhtError as err:
        _fail(err)


@main.command()
@click.argument("instance_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
              help="Write the JSON report here instead of stdout.")
def match(instance_file, output):
    """Limiting matching probabilities per class-server arc."""
    try:
        inst = _load_instance(instance_file)
        Lambda = inst.path.Lambda
        positive = [i for i in range(inst.n) if Lambda[i] > 0]
        rows = [[0.0] * inst.m for _ in range(inst.n)]
        provenance = {}
        if len(positive) == inst.n:
            matched = qp_matching(inst.menu, list(Lambda), list(inst.rates.mu))
            kkt = kkt_verify(matched, list(Lambda), list(inst.rates.mu))
            rows = [[float(v) for v in row] for row in matched.p]
            provenance = {str(i + 1): matched.provenance for i in range(inst.n)}
        else:
            _, comps, dag = decompose(inst)
            reduced_menu = Menu.from_rows([inst.menu.rows[i] for i in positive])
            matched = qp_matching(
                reduced_menu,
                [Lambda[i] for i in positive],
                list(inst.rates.mu),
            )
            kkt = kkt_verify(
                matched, [Lambda[i] for i in positive], list(inst.rates.mu)
            )
            for sub, i in enumerate(positive):
                rows[i] = [float(v) for v in matched.p[sub]]
                provenance[str(i + 1)] = matched.provenance
            for i in range(inst.n):
                if Lambda[i] == 0:
                    vector = serverless_matching(inst, comps, dag, i)
                    rows[i] = [float(v) for v in vector]
                    provenance[str(i + 1)] = "serverless_limit"
        payload = {
            "matching": rows,
            "row_provenance": provenance,
            "kkt_pass": bool(kkt),
        }
        manifest = _manifest("match", instance_file, output=output)
        text = emit_json(payload, manifest, output)
        if not output:
            click.echo(text)
    except BqhtError as err:
        _fail(err)


@main.command()
@click.argument("instance_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--chain", is_flag=True,
              help="Synthesize per-cell slacks for --targets on a chained graph.")
@click.option("--targets", default=None,
              help="Comma-separated wait targets, one per chain cell, increasing.")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
              help="Write the JSON report here instead of stdout.")
def design(instance_file, chain, targets, output):
    """Delay-minimizing menu, or slack synthesis for wait targets."""
    try:
        inst = _load_instance(instance_file)
        residual, comps, dag = decompose(inst)
        if chain or targets is not None:
            if targets is None:
                raise ParseError("--chain requires --targets")
            goal = [item.strip() for item in targets.split(",") if item.strip()]
            partition = find_chain_partition(dag)
            gamma_hat = implement_waits_chained(partition, goal)
            payload = {
                "chain_cells": [
                    [k + 1 for k in cell] for cell in partition.cells
                ],
                "cell_counts": list(partition.counts),
                "targets": [fnum(as_rational(t)) for t in goal],
                "gamma_hat": [fnum(g) for g in gamma_hat],
                "achieved_waits": [
                    fnum(w) for w in chain_waits(partition.counts, gamma_hat)
                ],
            }
        else:
            report = min_delay_menu(residual, comps)
            payload = {
                "sigma_star": [k + 1 for k in report.sigma_star.sigma],
                "menu": [list(row) for row in report.menu.rows],
                "order_delays": [
                    {
                        "sigma": [k + 1 for k in sigma],
                        "delay": delay,
                        "delay_value": fnum(delay),
                    }
                    for sigma, delay in report.order_delays
                ],
            }
        manifest = _manifest("design", instance_file, chain=chain,
                             targets=targets, output=output)
        text = emit_json(payload, manifest, output)
        if not output:
            click.echo(text)
    except BqhtError as err:
        _fail(err)


if __name__ == "__main__":
    main()
