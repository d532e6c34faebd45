"""Matplotlib renderers for the report artifacts. Each function writes one PNG
next to the delimited/JSON output it illustrates; everything is headless
(Agg) and deterministic for fixed inputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .analysis import BinStats, BoundReport, rejection_curves

_DPI = 120


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def reliability_diagram(bins: BinStats, path, title="Reliability"):
    b = bins.num_bins
    edges = np.arange(b) / b
    width = 1.0 / b
    acc = np.zeros(b)
    conf = np.zeros(b)
    mask = bins.counts > 0
    acc[mask] = bins.count_correct[mask] / bins.counts[mask]
    conf[mask] = bins.sum_confidence[mask] / bins.counts[mask]

    fig, (ax, axc) = plt.subplots(
        2, 1, figsize=(5, 6), sharex=True,
        gridspec_kw={"height_ratios": [3, 1]})
    ax.bar(edges, acc, width=width, align="edge", color="tab:blue",
           edgecolor="white", label="accuracy")
    ax.bar(edges, np.where(mask, conf - acc, 0.0), bottom=acc, width=width,
           align="edge", color="tab:red", alpha=0.35, edgecolor="white",
           label="gap to confidence")
    ax.plot([0, 1], [0, 1], "k--", linewidth=1)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    axc.bar(edges, bins.counts, width=width, align="edge", color="gray")
    axc.set_xlabel("confidence")
    axc.set_ylabel("count")
    axc.set_xlim(0, 1)
    _save(fig, path)


def rejection_plot(records, path, title="Error vs. rejection"):
    curves = rejection_curves(records)
    r = np.linspace(0, 1, len(curves["model"]))
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(r, curves["model"], label="model", color="tab:blue")
    ax.plot(r, curves["oracle"], label="oracle", color="tab:green",
            linestyle="--")
    ax.plot(r, curves["random"], label="random", color="tab:gray",
            linestyle=":")
    ax.set_xlabel("rejected fraction")
    ax.set_ylabel("error rate of retained")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)


def history_plot(history, path, title="Training history"):
    steps = [h["step"] for h in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in ("total", "ce", "uda", "cal"):
        ax1.plot(steps, [h[key] for h in history], label=key)
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax1.set_title(title)
    ax2.plot(steps, [h["source_eval_accuracy"] for h in history],
             color="tab:green")
    ax2.set_xlabel("step")
    ax2.set_ylabel("source eval accuracy")
    ax2.set_ylim(0, 1.02)
    fig.tight_layout()
    _save(fig, path)


def sweep_plot(rows, path, title="Calibration-weight sweep"):
    lam = [r["lambda_cal"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(lam, [r["accuracy"] for r in rows], "o-", color="tab:green")
    ax1.set_xscale("symlog", linthresh=0.1)
    ax1.set_xlabel("lambda_cal")
    ax1.set_ylabel("target accuracy")
    ax2.plot(lam, [r["ece"] for r in rows], "o-", color="tab:red", label="ece")
    prrs = [r["prr"] for r in rows]
    if all(p is not None for p in prrs):
        ax2b = ax2.twinx()
        ax2b.plot(lam, prrs, "s--", color="tab:blue", label="prr")
        ax2b.set_ylabel("prr")
    ax2.set_xscale("symlog", linthresh=0.1)
    ax2.set_xlabel("lambda_cal")
    ax2.set_ylabel("target ece")
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def bound_plot(rep: BoundReport, path, title="Calibration bound terms"):
    names = ["target loss", "U", "U (augmented)"]
    vals = [rep.target_cal_loss, rep.upper_bound_u, rep.upper_bound_u_aug]
    errs = [3 * rep.target_cal_loss_stderr, 3 * rep.upper_bound_u_stderr,
            3 * rep.upper_bound_u_aug_stderr]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(names, vals, yerr=errs, capsize=4,
           color=["tab:blue", "tab:orange", "tab:green"])
    ax.set_ylabel("value (3-sigma error bars)")
    ax.set_title(f"{title} [{rep.bound_flag}]")
    _save(fig, path)
