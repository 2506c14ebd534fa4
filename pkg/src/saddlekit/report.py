"""Turn sweep summary CSVs into an aggregate CSV and companion figures.

The aggregate table carries success rate and f-call quartiles per
configuration.  For every (problem, b, m, n, oracle) group that has
grid-indexed rows, a PNG shows median f-calls against the grid index k
with the inter-quartile band; the adaptive policy, when present, appears
as a horizontal line with its own band.  Grid points with no successful
trial are left out of the curve, matching the convention that missing
data mean no run succeeded.
"""

from __future__ import annotations

import os
from typing import Sequence

from .experiments import (AggregateRow, aggregate, read_summary_csv,
                          write_aggregate_csv)


def collect_rows(inputs: Sequence[str]) -> list:
    """Read trial rows from summary CSV files and/or directories of them."""
    paths = []
    for item in inputs:
        if os.path.isdir(item):
            found = sorted(
                os.path.join(item, name) for name in os.listdir(item)
                if name.endswith(".csv"))
            paths.extend(found)
        elif os.path.isfile(item):
            paths.append(item)
        else:
            raise FileNotFoundError(f"no such file or directory: {item}")
    rows = []
    for path in paths:
        try:
            rows.extend(read_summary_csv(path))
        except ValueError:
            continue    # skip non-summary CSVs (e.g. a previous aggregate)
    if not rows:
        raise ValueError("no sweep summary rows found in the given inputs")
    return rows


def _group_key(agg: AggregateRow):
    return (agg.problem, agg.b, agg.m, agg.n, agg.oracle)


def _slug(key) -> str:
    problem, b, m, n, oracle = key
    parts = [problem]
    if b is not None:
        parts.append(f"b{b:g}")
    parts.append(f"m{m}")
    parts.append(f"n{n}")
    parts.append(oracle)
    return "_".join(parts)


def render_figures(aggs: Sequence[AggregateRow], out_dir: str) -> list:
    """Write one PNG per configuration group; returns the created paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups: dict = {}
    for agg in aggs:
        groups.setdefault(_group_key(agg), []).append(agg)

    created = []
    for key in sorted(groups, key=lambda k: (k[0], k[1] if k[1] is not None else -1.0,
                                             k[2], k[3], k[4])):
        members = groups[key]
        grid = sorted((a for a in members if a.k is not None), key=lambda a: a.k)
        adapt = next((a for a in members if a.eta_policy == "adapt"), None)
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        plotted = False

        ks = [a.k for a in grid if a.median is not None]
        meds = [a.median for a in grid if a.median is not None]
        if ks:
            q1s = [a.q1 for a in grid if a.median is not None]
            q3s = [a.q3 for a in grid if a.median is not None]
            ax.plot(ks, meds, "o-", color="tab:blue", label="fixed grid")
            ax.fill_between(ks, q1s, q3s, color="tab:blue", alpha=0.25, lw=0)
            plotted = True
        if adapt is not None and adapt.median is not None:
            ax.axhline(adapt.median, color="tab:red", ls="--", label="adaptive")
            ax.axhspan(adapt.q1, adapt.q3, color="tab:red", alpha=0.15, lw=0)
            plotted = True
        if not plotted:
            ax.text(0.5, 0.5, "no successful trials", ha="center", va="center",
                    transform=ax.transAxes)

        problem, b, m, n, oracle = key
        bits = [problem]
        if b is not None:
            bits.append(f"b={b:g}")
        bits.append(f"m={m}, n={n}" if m != n else f"n=m={n}")
        bits.append(oracle)
        ax.set_title(", ".join(bits))
        ax.set_xlabel(r"$k$  ($\eta = \bar\eta \cdot 10^{-k/10}$)")
        ax.set_ylabel("f-calls to target (median, IQR)")
        if plotted:
            ax.set_yscale("log")
            ax.legend(loc="best")
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, _slug(key) + ".png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        created.append(path)
    return created


def make_report(inputs: Sequence[str], out_dir: str,
                figures: bool = True) -> dict:
    """Aggregate the given summaries into out_dir; optionally render figures.

    Returns {"aggregate_csv": path, "figures": [paths], "rows": count}.
    """
    rows = collect_rows(inputs)
    aggs = aggregate(rows)
    os.makedirs(out_dir, exist_ok=True)
    agg_path = os.path.join(out_dir, "aggregate.csv")
    write_aggregate_csv(aggs, agg_path)
    figs = render_figures(aggs, out_dir) if figures else []
    return {"aggregate_csv": agg_path, "figures": figs, "rows": len(rows)}
