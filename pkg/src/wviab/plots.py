"""Figure rendering for the CLI report path.

Each writer takes the same data that went into a CSV artifact and saves a
PNG next to it.  The CSV stays the canonical, byte-stable output; figures
are a convenience view of the same numbers.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def save_defects(path, ts, defects, title="node defect"):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    vals = np.maximum(np.asarray(defects, dtype=float), 1e-18)
    ax.semilogy(ts, vals, "o-", ms=4)
    ax.set_xlabel("t")
    ax.set_ylabel("W1 distance to tube")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_rates(path, hs, rates, title="tangency rate probe"):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    rs = np.maximum(np.asarray(rates, dtype=float), 1e-18)
    ax.loglog(hs, rs, "o-", ms=4)
    ax.set_xlabel("h")
    ax.set_ylabel("rate  (1/h) W1((Id+h xi)# nu ; Q(tau+h))")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_gronwall(path, ts, g, bound, slack):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ts, g, "o-", ms=4, label="g(t): sampled gap to tube")
    ax.plot(ts, np.asarray(bound) + slack, "--", label="envelope + slack")
    ax.set_xlabel("t")
    ax.set_ylabel("W1 distance")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_trajectory(path, traj, title="trajectory"):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    pts = np.stack([mu.points for mu in traj.measures])  # (T, n, d)
    if pts.shape[2] == 1:
        for a in range(pts.shape[1]):
            ax.plot(traj.times, pts[:, a, 0], lw=1)
        ax.set_xlabel("t")
        ax.set_ylabel("x")
    elif pts.shape[2] == 2:
        for a in range(pts.shape[1]):
            ax.plot(pts[:, a, 0], pts[:, a, 1], lw=1)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.set_aspect("equal", adjustable="datalim")
    else:
        m1 = [float(np.dot(mu.weights, np.linalg.norm(mu.points, axis=1)))
              for mu in traj.measures]
        ax.plot(traj.times, m1, lw=1.5)
        ax.set_xlabel("t")
        ax.set_ylabel("first moment")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_counterexample(path, hs, lhs, rhs):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(hs, np.maximum(lhs, 1e-18), "o-", ms=4, label="measured increment")
    ax.loglog(hs, np.maximum(rhs, 1e-18), "--", label="one-sided upper estimate")
    ax.set_xlabel("h")
    ax.set_ylabel("value")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
