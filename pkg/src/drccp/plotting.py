"""Static figures written next to the CSV outputs (Agg backend, no display)."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .reformulate import SETS  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=path.suffix)
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=110, metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def plot_cutting_trace(trace, path):
    """Upper bound M and improvement sigma per master iteration."""
    k = np.array([r["k"] for r in trace])
    M = np.array([r["M"] for r in trace], float)
    sigma = np.array([r["sigma"] for r in trace], float)
    steps = [r["step"] for r in trace]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.step(k, M, where="post", color="C0")
    upd = np.array([s == "update" for s in steps])
    ax1.plot(k[upd], M[upd], "o", ms=3, color="C0", label="incumbent update")
    ax1.set_ylabel("M")
    ax1.legend(loc="upper right", fontsize=8)
    ax2.semilogy(k, np.maximum(np.abs(sigma), 1e-16), color="C1")
    ax2.set_ylabel("|sigma|")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    return _save(fig, path)


def plot_comparison(report, path):
    """Membership of each candidate in every set.

    One-dimensional decisions give a strip chart over x; otherwise one
    scatter panel per set over the first two coordinates.
    """
    rows = report.rows
    sets = [s for s in SETS if any(s in r["verdicts"] for r in rows)] or list(SETS)
    if not rows:
        fig, ax = plt.subplots(figsize=(4, 2))
        ax.text(0.5, 0.5, "no candidates", ha="center", va="center")
        ax.set_axis_off()
        return _save(fig, path)
    X = np.array([r["x"] for r in rows], float)
    if X.shape[1] == 1:
        fig, ax = plt.subplots(figsize=(7, 0.45 * len(sets) + 1.2))
        for j, name in enumerate(sets):
            member = np.array([bool(r["verdicts"].get(name)) for r in rows])
            ax.plot(X[member, 0], np.full(member.sum(), j), "|", color="C2", ms=10)
            ax.plot(X[~member, 0], np.full((~member).sum(), j), "|", color="0.8", ms=10)
        ax.set_yticks(range(len(sets)), sets)
        ax.set_xlabel("x")
        ax.set_title(f"theta={report.theta:g}, alpha={report.alpha:g}, violations={report.violation_count}",
                     fontsize=9)
    else:
        cols = min(4, len(sets))
        nrows = int(np.ceil(len(sets) / cols))
        fig, axes = plt.subplots(nrows, cols, figsize=(3 * cols, 3 * nrows), squeeze=False)
        for ax, name in zip(axes.flat, sets):
            member = np.array([bool(r["verdicts"].get(name)) for r in rows])
            ax.scatter(X[~member, 0], X[~member, 1], s=4, color="0.8")
            ax.scatter(X[member, 0], X[member, 1], s=4, color="C2")
            ax.set_title(name, fontsize=9)
        for ax in list(axes.flat)[len(sets):]:
            ax.set_axis_off()
    fig.tight_layout()
    return _save(fig, path)


def plot_worst_case(theta_grid, probabilities, alpha, path):
    """Worst-case violation probability against the ball radius."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(theta_grid, probabilities, "-o", ms=3)
    ax.axhline(alpha, color="C3", lw=0.8, ls="--", label="alpha")
    ax.legend(fontsize=8)
    ax.set_xlabel("theta")
    ax.set_ylabel("worst-case P(F > 0)")
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    return _save(fig, path)
