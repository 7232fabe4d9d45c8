"""Report figures: certified region, iteration histories, trajectories."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import simulate
from .synthesis import ellipsoid_polyline

__all__ = ["plot_region", "plot_histories", "plot_timeseries"]


def _state_outline(X):
    """Closed 2-d outline of the state polytope."""
    if hasattr(X, "bounds"):
        bx, by = X.bounds
        pts = np.array([[-bx, -by], [bx, -by], [bx, by], [-bx, by], [-bx, -by]])
        return pts
    V = np.asarray(X.vertices(), dtype=float)
    order = np.argsort(np.arctan2(V[:, 1], V[:, 0]))
    V = V[order]
    return np.vstack([V, V[:1]])


def plot_region(model, result, path, n_traj=8, t_final=20.0, step=5e-3, seed=0):
    """Phase-plane figure: state set, certified ellipse, sample trajectories.

    Only rendered for two-state models; returns the path, or None otherwise.
    """
    cert = getattr(result, "certificate", result)
    if model.n != 2 or cert is None:
        return None
    P = cert.P
    K = cert.K

    fig, ax = plt.subplots(figsize=(5.2, 5.0))
    box = _state_outline(model.X)
    ax.plot(box[:, 0], box[:, 1], "k--", lw=1.0, label="state set")
    ell = ellipsoid_polyline(P)
    ax.plot(ell[:, 0], ell[:, 1], "C0-", lw=1.6, label="certified set")

    rng = np.random.default_rng(seed)
    th = rng.uniform(0.0, 2.0 * np.pi, size=n_traj)
    U = np.stack([np.cos(th), np.sin(th)], axis=1)
    L = np.linalg.cholesky(0.5 * (P + P.T))
    X0 = 0.98 * np.linalg.solve(L.T, U.T).T
    for i, x0 in enumerate(X0):
        traj = simulate(model, K, x0, t_final, step=step)
        ax.plot(traj.x[:, 0], traj.x[:, 1], "C1-", lw=0.7, alpha=0.8,
                label="trajectories" if i == 0 else None)
        ax.plot([x0[0]], [x0[1]], "C1.", ms=5)
    ax.plot([0], [0], "k+", ms=8)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    name = model.name or "model"
    ax.set_title(f"{name}: certified invariant set")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_histories(result, path):
    """Relaxation level and trace against iteration count."""
    panels = []
    if result.lambda_history:
        panels.append(("relaxation level", list(result.lambda_history)))
    if result.trace_history:
        panels.append(("trace(P)", list(result.trace_history)))
    if not panels:
        return None
    fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.2))
    axes = np.atleast_1d(axes)
    for ax, (label, vals) in zip(axes, panels):
        ax.plot(range(len(vals)), vals, "o-", ms=4)
        if label.startswith("relaxation"):
            ax.axhline(0.0, color="k", lw=0.8, ls=":")
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_timeseries(traj, model, path):
    """States and control channels of one simulated run."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 5.0), sharex=True)
    for i in range(model.n):
        ax1.plot(traj.t, traj.x[:, i], lw=1.1, label=f"x{i + 1}")
    ax1.set_ylabel("states")
    ax1.legend(loc="upper right", fontsize=8)
    ax1.grid(True, alpha=0.3)

    for i in range(model.m):
        ax2.plot(traj.t, traj.v[:, i], lw=0.9, ls="--", label=f"v{i + 1}")
        ax2.plot(traj.t, traj.u[:, i], lw=1.1, label=f"u{i + 1}")
        ax2.axhline(model.u_bar[i], color="k", lw=0.7, ls=":")
        ax2.axhline(-model.u_bar[i], color="k", lw=0.7, ls=":")
    ax2.set_xlabel("t")
    ax2.set_ylabel("control")
    ax2.legend(loc="upper right", fontsize=8)
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
