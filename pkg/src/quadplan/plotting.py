"""SVG figures (and their data as CSV) from plan files and tracking logs."""

from __future__ import annotations

import os

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from quadplan import io as qio
from quadplan import so3
from quadplan.sim import tracking_metrics

_SERIES = (("com", "CoM [m]"), ("lin", "linear momentum [kg m/s]"), ("ang", "angular momentum [kg m^2/s]"),
           ("ori", "base orientation [rad]"))


def _kind(path) -> str:
    with open(path) as fh:
        first = fh.readline()
    for tag in ("quadplan-plan", "quadplan-log"):
        if first.startswith(f"# {tag} v"):
            return tag
    raise qio.FormatError(f"{path}: neither a plan nor a tracking log")


def _label(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _plan_series(plan) -> dict:
    ori = np.array([so3.log(q) for q in plan.base_quat])
    return {"com": plan.com_ref, "lin": plan.lin_ref, "ang": plan.ang_ref, "ori": ori}


def render(inputs, out_svg, stamp: dict | None = None) -> list:
    """Time series of every plan (first one dashed, the rest solid) and
    mean/max error bars of every log.  Returns the CSV paths written."""
    plans = [(p, qio.load_plan(p)[0]) for p in inputs if _kind(p) == "quadplan-plan"]
    logs = [(p, qio.load_log(p)) for p in inputs if _kind(p) == "quadplan-log"]
    stem = os.path.splitext(out_svg)[0]
    n_rows = (len(_SERIES) if plans else 0) + (1 if logs else 0)
    fig = Figure(figsize=(11, 2.4 * n_rows))
    axes = fig.subplots(n_rows, 3, squeeze=False)
    written = []
    stamp = stamp or {}

    if plans:
        length = max(p.horizon + 1 for _, p in plans)
        dt = plans[0][1].dt
        cols, data = ["t"], [np.arange(length) * dt]
        for i, (path, plan) in enumerate(plans):
            series = _plan_series(plan)
            t = np.arange(plan.horizon + 1) * plan.dt
            style = "--" if i == 0 else "-"
            for r, (key, title) in enumerate(_SERIES):
                for a, axis in enumerate("xyz"):
                    ax = axes[r, a]
                    ax.plot(t, series[key][:, a], style, lw=1.0, label=_label(path))
                    ax.set_title(f"{title} {axis}", fontsize=8)
                    col = np.full(length, np.nan)
                    col[:t.size] = series[key][:, a]
                    cols.append(f"{_label(path)}_{key}_{axis}")
                    data.append(col)
        for ax in axes[len(_SERIES) - 1]:
            ax.set_xlabel("time [s]")
        axes[0, 0].legend(fontsize=7)
        path = stem + ".series.csv"
        qio.save_table(path, "quadplan-series", cols, np.column_stack(data), stamp)
        written.append(path)

    if logs:
        row = axes[-1]
        names = [_label(p) for p, _ in logs]
        mets = [tracking_metrics(lg) for _, lg in logs]
        x = np.arange(len(logs))
        for ax, key, title in ((row[0], "com", "CoM error [m]"), (row[1], "ori", "orientation error [rad]")):
            mean = np.array([m[f"{key}_err_mean"] for m in mets])
            peak = np.array([m[f"{key}_err_max"] for m in mets])
            ax.bar(x, mean, color="0.6")
            ax.errorbar(x, mean, yerr=np.vstack([np.zeros_like(mean), peak - mean]), fmt="none", ecolor="k", capsize=3)
            ax.set_xticks(x, names, fontsize=7, rotation=20)
            ax.set_title(f"{title}: mean, bar to max", fontsize=8)
        row[2].axis("off")
        table = [[m["com_err_mean"], m["com_err_max"], m["ori_err_mean"], m["ori_err_max"], float(lg.fell)]
                 for m, (_, lg) in zip(mets, logs)]
        path = stem + ".errors.csv"
        qio.save_table(path, "quadplan-errors", ["com_err_mean", "com_err_max", "ori_err_mean",
                                                 "ori_err_max", "fell"], table, dict(stamp, logs=names))
        written.append(path)

    fig.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": "quadplan"}):
        fig.savefig(out_svg, format="svg", metadata={"Date": None})
    return written
