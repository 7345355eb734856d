"""Trajectory export, run summaries, figure metrics and plots.

Trajectory CSV columns are ``k,agent,x_1..x_n,u_1..u_m,target_1..target_n``
with one row per (tick, agent), ticks outermost.  Floats are written with 17
significant digits, which reloads bit for bit.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .controller import Trajectory

FLOAT_FORMAT = "%.17g"


def csv_header(n: int, m: int) -> str:
    cols = ["k", "agent"]
    cols += [f"x_{i}" for i in range(1, n + 1)]
    cols += [f"u_{i}" for i in range(1, m + 1)]
    cols += [f"target_{i}" for i in range(1, n + 1)]
    return ",".join(cols)


def trajectory_table(traj: Trajectory) -> np.ndarray:
    S1, N, n = traj.x.shape
    k = np.repeat(np.arange(S1), N)
    agent = np.tile(np.arange(N), S1)
    return np.column_stack([k, agent, traj.x.reshape(-1, n), traj.inputs.reshape(S1 * N, -1), traj.targets.reshape(-1, n)])


def trajectory_csv(traj: Trajectory) -> str:
    n, m = traj.x.shape[2], traj.inputs.shape[2]
    fmt = ["%d", "%d"] + [FLOAT_FORMAT] * (2 * n + m)
    buf = io.StringIO()
    np.savetxt(buf, trajectory_table(traj), fmt=fmt, delimiter=",", header=csv_header(n, m), comments="")
    return buf.getvalue()


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    path.write_text(trajectory_csv(traj))
    return path


def read_trajectory_csv(path):
    """Inverse of :func:`write_trajectory_csv`: ``(x, u, targets)`` arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    n = sum(c.startswith("x_") for c in header)
    m = sum(c.startswith("u_") for c in header)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    S1 = int(data[:, 0].max()) + 1
    N = int(data[:, 1].max()) + 1
    x = data[:, 2 : 2 + n].reshape(S1, N, n)
    u = data[:, 2 + n : 2 + n + m].reshape(S1, N, m)
    t = data[:, 2 + n + m :].reshape(S1, N, n)
    return x, u, t


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def assignment_is_permutation(sigma) -> bool:
    sigma = np.asarray(sigma)
    return len(np.unique(sigma)) == sigma.size


def matched_distances(traj: Trajectory, targets: np.ndarray, k: int = -1) -> np.ndarray:
    """``|x_i(k) - x^d_sigma(i)|`` with ``sigma`` the argmax rounding of the final coupling."""
    return np.linalg.norm(traj.x[k] - targets[traj.assignment()], axis=1)


def stationary_offset(traj: Trajectory, targets: np.ndarray) -> float:
    """``max_i min_j |x_i(final) - x^d_j|``."""
    d = np.linalg.norm(traj.x[-1][:, None, :] - targets[None, :, :], axis=2)
    return float(d.min(axis=1).max())


def max_overshoot(traj: Trajectory) -> float:
    """Largest excursion of any coordinate outside the span of its start and end values."""
    x = traj.x
    lo = np.minimum(x[0], x[-1])
    hi = np.maximum(x[0], x[-1])
    excess = np.maximum(x - hi, 0.0) + np.maximum(lo - x, 0.0)
    return float(excess.max())


def run_summary(traj: Trajectory, targets: np.ndarray, config_digest: str, epsilon: float) -> dict:
    sigma = traj.assignment()
    final = matched_distances(traj, targets)
    initial = matched_distances(traj, targets, 0)
    return {
        "config_digest": config_digest,
        "swarm_digest": traj.config_digest,
        "trajectory_fingerprint": traj.fingerprint(),
        "epsilon": epsilon,
        "n_agents": traj.n_agents,
        "steps": traj.steps,
        "assignment": sigma.tolist(),
        "assignment_is_permutation": assignment_is_permutation(sigma),
        "final_distances": final.tolist(),
        "mean_initial_distance": float(initial.mean()),
        "mean_final_distance": float(final.mean()),
        "coupling_entropy": traj.coupling_entropy.tolist(),
        "log_domain_ticks": int(traj.log_domain.sum()),
        "timing": {
            "sinkhorn_seconds_total": float(traj.sinkhorn_seconds.sum()),
            "mpc_seconds_total": float(traj.mpc_seconds.sum()),
            "sinkhorn_seconds_per_tick": float(np.mean(traj.sinkhorn_seconds)),
        },
    }


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Plots (static SVG, no display needed)
# ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed ids and no timestamp, so identical runs give identical files
    matplotlib.rcParams["svg.hashsalt"] = "sinkhorn-mpc"

    return plt


def plot_trajectories(traj: Trajectory, targets: np.ndarray, path, title: str = "") -> Path:
    """2-D: paths in the plane with target markers.  1-D: state against tick."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 5))
    x = traj.x
    if x.shape[2] >= 2:
        for i in range(x.shape[1]):
            ax.plot(x[:, i, 0], x[:, i, 1], lw=0.6, alpha=0.7)
        ax.scatter(x[0, :, 0], x[0, :, 1], s=6, c="0.4", label="start")
        ax.scatter(targets[:, 0], targets[:, 1], s=18, marker="x", c="k", label="targets")
        ax.set_xlabel("$x_1$")
        ax.set_ylabel("$x_2$")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="upper right", fontsize=8)
    else:
        ks = np.arange(x.shape[0])
        for t in targets[:, 0]:
            ax.axhline(t, color="0.85", lw=0.8, zorder=0)
        ax.plot(ks, x[:, :, 0], lw=0.9)
        ax.set_xlabel("k")
        ax.set_ylabel("x")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_overlay_1d(runs: dict, targets: np.ndarray, path) -> Path:
    """Overlay 1-D runs keyed by epsilon; the first is drawn solid, the others dashed."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for t in targets[:, 0]:
        ax.axhline(t, color="0.85", lw=0.8, zorder=0)
    styles = ["-", "--", ":", "-."]
    for idx, (eps, traj) in enumerate(runs.items()):
        ks = np.arange(traj.x.shape[0])
        lines = ax.plot(ks, traj.x[:, :, 0], ls=styles[idx % len(styles)], lw=0.9, color=f"C{idx}")
        lines[0].set_label(f"eps = {eps:g}")
    ax.set_xlabel("k")
    ax.set_ylabel("x")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
