"""Figure rendering for the report path; every plot lands next to its CSV."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fwddiff import value_of
from .lateral import ErrorState, ReferenceCircle
from .pipeline import Dataset, EvaluationReport, RunReport

DPI = 150


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def loss_curves(path: str, reports: Sequence[RunReport],
                mean_curve: Optional[Sequence[tuple[int, float]]] = None) -> str:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for rep in reports:
        for split, style in (("train", "-"), ("val", "--")):
            pts = [(e, l) for e, l in rep.curve(split) if math.isfinite(l)]
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, style, alpha=0.45, linewidth=1.0,
                        label=f"seed {rep.seed} {split}")
    if mean_curve:
        xs, ys = zip(*mean_curve)
        ax.plot(xs, ys, "k-", linewidth=2.0, label="mean (train)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    if len(reports) <= 5:
        ax.legend(fontsize=8)
    return _save(fig, path)


def param_curves(path: str, reports: Sequence[RunReport],
                 names: Sequence[str],
                 truth: Optional[dict[str, float]] = None) -> str:
    n = len(names)
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.2 * n), sharex=True,
                             squeeze=False)
    for i, name in enumerate(names):
        ax = axes[i][0]
        for rep in reports:
            rows = [(r.epoch, r.params[name]) for r in rep.records
                    if r.split == "train"]
            if rows:
                xs, ys = zip(*rows)
                ax.plot(xs, ys, "-", alpha=0.6, linewidth=1.0)
        if truth and name in truth:
            ax.axhline(truth[name], color="k", linewidth=1.2, linestyle=":",
                       label="true value")
            ax.legend(fontsize=8)
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
    axes[-1][0].set_xlabel("epoch")
    return _save(fig, path)


def error_profiles(path: str, times: Sequence[float],
                   errors: Sequence[ErrorState]) -> str:
    e1 = [value_of(e.e1) for e in errors]
    e2 = [value_of(e.e2) for e in errors]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5.5), sharex=True)
    ax1.plot(times, e1, "b-", linewidth=1.0)
    ax1.set_ylabel("e1 (m)")
    ax1.grid(True, alpha=0.3)
    ax2.plot(times, e2, "r-", linewidth=1.0)
    ax2.set_ylabel("e2 (rad)")
    ax2.set_xlabel("time (s)")
    ax2.grid(True, alpha=0.3)
    return _save(fig, path)


def _draw_circle(ax, circle: ReferenceCircle):
    theta = np.linspace(0.0, 2.0 * math.pi, 400)
    ax.plot(circle.cx + circle.radius * np.cos(theta),
            circle.cy + circle.radius * np.sin(theta),
            "k--", linewidth=1.0, label="reference")


def trajectory_plot(path: str, report: EvaluationReport,
                    circle: Optional[ReferenceCircle] = None) -> str:
    xs = [value_of(s.s_x) for s in report.rollout.states]
    ys = [value_of(s.s_y) for s in report.rollout.states]
    fig, ax = plt.subplots(figsize=(6, 6))
    if circle is not None:
        _draw_circle(ax, circle)
    ax.plot(xs, ys, "b-", linewidth=1.0, label="vehicle")
    ax.plot(xs[0], ys[0], "go", markersize=6, label="start")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def dataset_overview(path: str, data: Dataset) -> str:
    fig, ax = plt.subplots(figsize=(6, 6))
    seen_circle = False
    for run in data.runs:
        xs = [value_of(x) for x in run.trajectory.xs]
        ys = [value_of(y) for y in run.trajectory.ys]
        color = "tab:blue" if run.turn == "left" else "tab:orange"
        ax.plot(xs, ys, "-", color=color, alpha=0.6, linewidth=0.9)
        if run.circle is not None and not seen_circle:
            _draw_circle(ax, run.circle)
            seen_circle = True
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"{len(data.runs)} reference runs "
                 f"({len(data.train)} train / {len(data.val)} val)")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)
