"""Figure rendering for the report path.

Estimation runs get an interval plot of the estimates; simulation studies
get grouped bar charts of absolute bias and RMSE per target, one group per
estimand with one bar per estimator, mirroring the tabular output.

Rendering is deterministic: the Agg backend, fixed geometry, and stripped
PNG metadata keep reruns byte-identical for a fixed matplotlib version.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .estimators import EstimateReport
from .simlab import McReport

METHOD_COLORS = {"reg": "#3465a4", "ipw": "#4e9a06", "dr": "#cc0000"}
METHOD_ORDER = ("reg", "ipw", "dr")

_SAVE_KW = dict(dpi=150, metadata={"Software": None})


def _style(ax):
    ax.grid(True, axis="x", linewidth=0.4, alpha=0.5)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)


def render_estimates(reports: list[EstimateReport], path) -> None:
    """Horizontal point-and-interval plot, one row per estimand x method."""
    rows = list(reversed(reports))
    height = max(2.0, 0.45 * len(rows) + 1.2)
    fig, ax = plt.subplots(figsize=(7.5, height))
    ylabels = []
    for k, r in enumerate(rows):
        color = METHOD_COLORS.get(r.method, "#555753")
        if r.ci_low is not None and r.ci_high is not None:
            ax.hlines(k, r.ci_low, r.ci_high, color=color, linewidth=2.2)
        ax.plot([r.estimate], [k], "o", color=color, markersize=5.5)
        ylabels.append(f"{r.estimand}  [{r.method}]")
    ax.axvline(0.0, color="#888a85", linewidth=0.8, linestyle="--")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(ylabels, fontsize=8)
    ax.set_xlabel("estimate (with confidence interval)")
    _style(ax)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def _grouped_bars(report: McReport, value_fn, ylabel: str, path) -> None:
    labels = []
    for row in report.rows:
        if row.estimand not in labels:
            labels.append(row.estimand)
    methods = [m for m in METHOD_ORDER
               if any(r.estimator == m for r in report.rows)]
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(max(7.0, 1.05 * len(labels)), 4.0))
    for j, method in enumerate(methods):
        xs, ys = [], []
        for i, lab in enumerate(labels):
            try:
                row = report.row(lab, method)
            except KeyError:
                continue
            xs.append(i + (j - (len(methods) - 1) / 2.0) * width)
            ys.append(value_fn(row))
        ax.bar(xs, ys, width=width * 0.92,
               color=METHOD_COLORS.get(method, "#555753"), label=method.upper())
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False, fontsize=8)
    ax.grid(True, axis="y", linewidth=0.4, alpha=0.5)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_study_bias(report: McReport, path) -> None:
    _grouped_bars(report, lambda r: abs(r.bias), "absolute bias", path)


def render_study_rmse(report: McReport, path) -> None:
    _grouped_bars(report, lambda r: r.rmse, "RMSE", path)
