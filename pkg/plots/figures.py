"""Figure renderers for the CSV outputs of the experiment runner.

Each renderer consumes one or more CSVs documented in FORMATS.md and writes
one image.  The renderers validate their column requirements up front and
fail with the missing column named; they never modify the inputs.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import cm


class SchemaError(ValueError):
    """Input CSV does not match the documented format."""


def read_table(path, required_columns):
    """Load a CSV as {column: list of strings}; empty body is an error."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    for col in required_columns:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    table = {name: [] for name in header}
    for row in rows:
        if len(row) != len(header):
            raise SchemaError(f"{path}: ragged row {row!r}")
        for name, value in zip(header, row):
            table[name].append(value)
    return table


def col(table, name, cast=float):
    return [cast(v) if v != "" else math.nan for v in table[name]]


def _inventory_colors(q_levels):
    levels = sorted(set(q_levels))
    cmap = cm.viridis
    span = max(levels) - min(levels) or 1
    return {q: cmap((q - min(levels)) / span) for q in levels}, levels


def render_quotes(inputs, out_path, dpi):
    """Three panels (one per fad loading): displacements vs fad, coloured by
    inventory; ask solid, bid dashed."""
    table = read_table(inputs[0], ["q_weight", "t", "q", "u", "delta_a",
                                   "delta_b"])
    q_w = col(table, "q_weight")
    q = col(table, "q", int)
    u = col(table, "u")
    da = col(table, "delta_a")
    db = col(table, "delta_b")
    panels = sorted(set(q_w))
    colors, levels = _inventory_colors(q)
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.4),
                             sharey=True)
    axes = np.atleast_1d(axes)
    for ax, panel in zip(axes, panels):
        for level in levels:
            mask = [(w == panel and qi == level) for w, qi in zip(q_w, q)]
            us = [x for x, m in zip(u, mask) if m]
            order = np.argsort(us)
            us = np.array(us)[order]
            ax.plot(us, np.array([x for x, m in zip(da, mask) if m])[order],
                    "-", color=colors[level], lw=1.0)
            ax.plot(us, np.array([x for x, m in zip(db, mask) if m])[order],
                    "--", color=colors[level], lw=1.0)
        ax.set_title(f"fad loading {panel:g}")
        ax.set_xlabel("fad")
    axes[0].set_ylabel("displacement (ask solid, bid dashed)")
    sm = cm.ScalarMappable(cmap=cm.viridis,
                           norm=plt.Normalize(min(levels), max(levels)))
    fig.colorbar(sm, ax=axes, label="inventory", fraction=0.025)
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def render_quotes_gamma_diff(inputs, out_path, dpi):
    """Displacement difference between high and baseline fad-sensitivity."""
    table = read_table(inputs[0], ["t", "q", "u", "d_delta_a", "d_delta_b"])
    q = col(table, "q", int)
    u = col(table, "u")
    da = col(table, "d_delta_a")
    db = col(table, "d_delta_b")
    colors, levels = _inventory_colors(q)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for level in levels:
        mask = [qi == level for qi in q]
        us = np.array([x for x, m in zip(u, mask) if m])
        order = np.argsort(us)
        ax.plot(us[order], np.array([x for x, m in zip(da, mask) if m])[order],
                "-", color=colors[level], lw=1.0)
        ax.plot(us[order], np.array([x for x, m in zip(db, mask) if m])[order],
                "--", color=colors[level], lw=1.0)
    ax.set_xlabel("fad")
    ax.set_ylabel("displacement difference (ask solid, bid dashed)")
    sm = cm.ScalarMappable(cmap=cm.viridis,
                           norm=plt.Normalize(min(levels), max(levels)))
    fig.colorbar(sm, ax=ax, label="inventory")
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def render_filter(inputs, out_path, dpi):
    """Fad vs its filter, one panel per input file (U blue, U-hat red)."""
    fig, axes = plt.subplots(1, len(inputs), figsize=(4 * len(inputs), 3.2),
                             sharey=True)
    axes = np.atleast_1d(axes)
    for ax, path in zip(axes, inputs):
        table = read_table(path, ["t", "u_true", "u_hat"])
        t = col(table, "t")
        ax.plot(t, col(table, "u_true"), color="tab:blue", lw=0.9,
                label="fad")
        ax.plot(t, col(table, "u_hat"), color="tab:red", lw=0.9,
                label="filter")
        ax.set_xlabel("t")
    axes[0].set_ylabel("fad level")
    axes[0].legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def render_perf_sweep(inputs, out_path, dpi):
    """Strategy performance against the swept parameter."""
    table = read_table(inputs[0], ["axis", "value", "strategy", "mean",
                                   "stdev", "se"])
    axis = table["axis"][0]
    series = defaultdict(list)
    for value, strategy, mean in zip(col(table, "value"), table["strategy"],
                                     col(table, "mean")):
        series[strategy].append((value, mean))
    fig, ax = plt.subplots(figsize=(5, 3.6))
    styles = {"FI": "-o", "CJP": "-s", "PI": "-^"}
    for strategy in sorted(series):
        pts = sorted(series[strategy])
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                styles.get(strategy, "-x"), ms=3.5, lw=1.0, label=strategy)
    ax.set_xlabel(axis)
    ax.set_ylabel("mean performance")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def render_spread(inputs, out_path, dpi):
    """Time-zero bid-ask spread vs informed share, one line per penalty."""
    table = read_table(inputs[0], ["run_penalty", "informed_share", "spread"])
    series = defaultdict(list)
    for rp, share, spread in zip(col(table, "run_penalty"),
                                 col(table, "informed_share"),
                                 col(table, "spread")):
        series[rp].append((share, spread))
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for rp in sorted(series):
        pts = sorted(series[rp])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "-o", ms=3,
                lw=1.0, label=f"running penalty {rp:g}")
    ax.set_xlabel("share of informed traders")
    ax.set_ylabel("bid-ask spread at t = 0")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def render_fd_comparison(inputs, out_path, dpi):
    """FD displacements (solid) vs closed form (dashed) at the earliest
    tabulated time; left panel ask, right panel bid."""
    table = read_table(inputs[0], ["t", "q", "u", "delta_a_fd", "delta_a_cf",
                                   "delta_b_fd", "delta_b_cf"])
    t = col(table, "t")
    t0 = min(t)
    q = col(table, "q", int)
    u = col(table, "u")
    cols = {name: col(table, name) for name in
            ("delta_a_fd", "delta_a_cf", "delta_b_fd", "delta_b_cf")}
    colors, levels = _inventory_colors(q)
    fig, (ax_a, ax_b) = plt.subplots(1, 2, figsize=(8.5, 3.4), sharey=True)
    for level in levels:
        mask = [(ti == t0 and qi == level) for ti, qi in zip(t, q)]
        if not any(mask):
            continue
        us = np.array([x for x, m in zip(u, mask) if m])
        order = np.argsort(us)
        for ax, fd_name, cf_name in ((ax_a, "delta_a_fd", "delta_a_cf"),
                                     (ax_b, "delta_b_fd", "delta_b_cf")):
            fd = np.array([x for x, m in zip(cols[fd_name], mask) if m])[order]
            cf = np.array([x for x, m in zip(cols[cf_name], mask) if m])[order]
            if np.all(np.isnan(fd)):
                continue
            ax.plot(us[order], fd, "-", color=colors[level], lw=1.0)
            ax.plot(us[order], cf, "--", color=colors[level], lw=1.0)
    ax_a.set_title("ask displacement")
    ax_b.set_title("bid displacement")
    for ax in (ax_a, ax_b):
        ax.set_xlabel("fad")
    ax_a.set_ylabel("displacement (FD solid, closed form dashed)")
    sm = cm.ScalarMappable(cmap=cm.viridis,
                           norm=plt.Normalize(min(levels), max(levels)))
    fig.colorbar(sm, ax=(ax_a, ax_b), label="inventory", fraction=0.025)
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def render_ctmc(inputs, out_path, dpi):
    """Arrival-filter demo: true CTMC fad level and the posterior mean."""
    table = read_table(inputs[0], ["t", "u_true", "u_hat"])
    t = col(table, "t")
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    ax.step(t, col(table, "u_true"), where="post", color="tab:blue", lw=0.9,
            label="fad level")
    ax.plot(t, col(table, "u_hat"), color="tab:red", lw=0.9,
            label="posterior mean")
    ax.set_xlabel("t")
    ax.set_ylabel("fad level")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


RENDERERS = {
    "quotes": render_quotes,
    "quotes_gamma_diff": render_quotes_gamma_diff,
    "filter": render_filter,
    "perf_sweep": render_perf_sweep,
    "spread": render_spread,
    "fd_comparison": render_fd_comparison,
    "ctmc": render_ctmc,
}
