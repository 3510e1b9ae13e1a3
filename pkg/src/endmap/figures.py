"""Figure rendering for the report path of the CLI.

matplotlib is imported lazily with the Agg backend so library users never
pay for it and headless runs work.  Figures accompany the delimited
output; they are a convenience view, the CSV stays the artifact of
record.
"""

from __future__ import annotations

import math

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def save_trajectory(traj, path: str):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(traj.states.shape[1]):
        ax.plot(traj.times, traj.states[:, i], label=f"x{i + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.legend(loc="best")
    ax.set_title("trajectory" + ("" if traj.converged else " (guard fired)"))
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_arc(arc, path: str):
    plt = _plt()
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    for i in range(arc.states.shape[1]):
        axes[0].plot(arc.times, arc.states[:, i], label=f"x{i + 1}")
    for i in range(arc.covectors.shape[1]):
        axes[1].plot(arc.times, arc.covectors[:, i], label=f"p{i + 1}")
    for i in range(arc.controls.shape[1]):
        axes[2].plot(arc.times, arc.controls[:, i], label=f"u{i + 1}")
    axes[0].set_ylabel("state")
    axes[1].set_ylabel("covector")
    axes[2].set_ylabel("control")
    axes[2].set_xlabel("t")
    for ax in axes:
        ax.legend(loc="best", fontsize=8)
    axes[0].set_title(f"normal extremal, cost = {arc.cost:.6g}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_cloud(cloud, path: str):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 6))
    sphere = np.array([p.endpoint for p in cloud.points]) if cloud.points else None
    front = np.array([p.endpoint for p in cloud.front_points]) if cloud.front_points else None
    if sphere is not None and sphere.shape[1] >= 2:
        ax.plot(sphere[:, 0], sphere[:, 1], ".", ms=3, color="tab:blue", label="sphere")
    elif sphere is not None:
        ax.plot(sphere[:, 0], np.zeros(len(sphere)), ".", ms=3, color="tab:blue", label="sphere")
    if front is not None and front.shape[1] >= 2:
        ax.plot(front[:, 0], front[:, 1], "x", ms=4, color="tab:orange", label="front")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(f"value-function level set, r = {cloud.r:g}")
    ax.legend(loc="best")
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_scan(scan, path: str):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    deltas = [row.delta for row in scan.rows if row.found]
    pnorms = [row.pnorm for row in scan.rows if row.found]
    if deltas:
        ax.loglog(deltas, pnorms, "o-", color="tab:blue")
    ax.set_xlabel("offset from the target point")
    ax.set_ylabel("min |p(0)| among solutions")
    ax.set_title("properness scan")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_tangency(report, cloud, path: str):
    plt = _plt()
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    pts = np.array([p.endpoint for p in cloud.points]) if cloud.points else None
    if pts is not None and len(pts):
        rel = pts - report.A
        off = np.abs(rel @ report.normal)
        inplane = np.linalg.norm(rel - np.outer(rel @ report.normal, report.normal), axis=1)
        sel = (off > 0) & (inplane > 0)
        axes[0].loglog(inplane[sel], off[sel], ".", ms=3, color="tab:blue")
        if math.isfinite(report.slope) and sel.any():
            xs = np.array([inplane[sel].min(), inplane[sel].max()])
            axes[0].loglog(
                xs,
                np.exp(report.intercept) * xs**report.slope,
                "-",
                color="tab:red",
                label=f"slope {report.slope:.3f}",
            )
            axes[0].legend(loc="best")
    axes[0].set_xlabel("in-plane distance")
    axes[0].set_ylabel("offset along the normal")
    ws = [w.window for w in report.windows if math.isfinite(w.max_angle)]
    angs = [math.degrees(w.max_angle) for w in report.windows if math.isfinite(w.max_angle)]
    if ws:
        axes[1].semilogx(ws, angs, "o-", color="tab:blue")
    axes[1].set_xlabel("window radius around the target")
    axes[1].set_ylabel("max chord angle (deg)")
    axes[1].grid(True, which="both", alpha=0.3)
    fig.suptitle("tangency of the level set to the hyperplane")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
