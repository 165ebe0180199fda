"""Output rendering for the command line: JSON documents, delimited tables,
and figures.

Floats are serialized at 12 significant digits and exact rationals as
fraction strings, so nothing is lost in transit.  Every document embeds the
run manifest that produced it (command, instance path, options, tool
version, seed), which is what makes outputs reproducible byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, is_dataclass, asdict
from fractions import Fraction
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

SIGNIFICANT_DIGITS = 12


def fnum(value) -> float:
    """Round to 12 significant digits; the JSON layer emits exactly this."""
    return float(f"{float(value):.{SIGNIFICANT_DIGITS}g}")


def jsonable(value):
    """Recursively convert to JSON-safe types: exact rationals to fraction
    strings, floats rounded, sets sorted."""
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        return fnum(value)
    if is_dataclass(value) and not isinstance(value, type):
        return jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (frozenset, set)):
        return [jsonable(v) for v in sorted(value)]
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    return str(value)


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a command's output."""

    command: str
    instance: str
    options: dict
    version: str
    seed: Optional[int] = None

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "instance": self.instance,
            "options": jsonable(self.options),
            "tool_version": self.version,
            "seed": self.seed,
        }


def emit_json(payload: dict, manifest: RunManifest, output: Optional[str]) -> str:
    document = {"manifest": manifest.as_dict()}
    document.update(jsonable(payload))
    text = json.dumps(document, indent=2)
    if output:
        Path(output).write_text(text + "\n")
    return text


def emit_csv(header, rows, manifest: RunManifest, output: Optional[str]) -> str:
    buf = io.StringIO()
    for key, value in manifest.as_dict().items():
        buf.write(f"# {key}: {json.dumps(value) if isinstance(value, dict) else value}\n")
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [f"{v:.{SIGNIFICANT_DIGITS}g}" if isinstance(v, float) else v for v in row]
        )
    text = buf.getvalue()
    if output:
        Path(output).write_text(text)
    return text


def figure_path(output: str, suffix: str) -> str:
    base = Path(output)
    return str(base.with_name(f"{base.stem}_{suffix}.png"))


def dag_figure(components, dag, path: str) -> None:
    """Component graph: one column per longest-path level, server-less
    components drawn dashed."""
    preds = {k: set() for k in range(dag.K)}
    for a, b in dag.arcs:
        preds[b].add(a)
    level = {}
    remaining = set(range(dag.K))
    while remaining:
        ready = [k for k in remaining if preds[k] <= level.keys()]
        for k in ready:
            level[k] = max((level[a] + 1 for a in preds[k]), default=0)
            remaining.discard(k)
    columns = {}
    pos = {}
    for k in sorted(level):
        c = level[k]
        pos[k] = (c, -columns.get(c, 0))
        columns[c] = columns.get(c, 0) + 1

    fig, ax = plt.subplots(figsize=(1.8 + 2.2 * (max(columns) + 1), 1.5 + 1.4 * max(columns.values())))
    for a, b in sorted(dag.arcs):
        (xa, ya), (xb, yb) = pos[a], pos[b]
        ax.annotate(
            "",
            xy=(xb, yb),
            xytext=(xa, ya),
            arrowprops=dict(arrowstyle="-|>", color="0.3", shrinkA=24, shrinkB=24),
        )
    for k, comp in enumerate(components):
        x, y = pos[k]
        classes = ",".join(str(i + 1) for i in sorted(comp.classes))
        servers = ",".join(str(j + 1) for j in sorted(comp.servers)) or "-"
        style = dict(boxstyle="circle", fc="white", ec="0.2")
        if comp.serverless:
            style["ls"] = "--"
        ax.text(
            x,
            y,
            f"C{k + 1}\nc:{classes}\ns:{servers}",
            ha="center",
            va="center",
            fontsize=9,
            bbox=style,
        )
    ax.set_xlim(-0.6, max(x for x, _ in pos.values()) + 0.6)
    ax.set_ylim(min(y for _, y in pos.values()) - 0.6, 0.6)
    ax.axis("off")
    ax.set_title("component graph (arcs: donor -> recipient)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def convergence_figure(sweep, path: str) -> None:
    """Gap between scaled prelimit waits and their limits, per class."""
    eps = [float(row.epsilon) for row in sweep.rows]
    n = len(sweep.limit_waits)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for i in range(n):
        gaps = [
            abs(float(row.scaled_waits[i]) - float(sweep.limit_waits[i]))
            for row in sweep.rows
        ]
        ax.loglog(eps, gaps, marker="o", label=f"class {i + 1}")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("|eps * W(eps) - limit|")
    ax.grid(True, which="both", ls=":", lw=0.5)
    ax.legend(fontsize=8)
    ax.set_title("convergence of scaled waits")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
