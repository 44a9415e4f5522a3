"""Static SVG figures (reward curve, FD, loss vs lambda, M_t vs time)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt and no timestamp keep the SVG bytes reproducible
matplotlib.rcParams["svg.hashsalt"] = "mixedflow"


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_reward_curve(path, rewards, smoothed, warmup: int) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ep = np.arange(len(rewards))
    ax.plot(ep, rewards, color="0.7", lw=0.8, label="episode total")
    ax.plot(ep, smoothed, color="C3", lw=1.5, label="smoothed")
    if warmup:
        ax.axvspan(0, warmup, color="0.9", label="warm-up")
    ax.set_xlabel("episode")
    ax.set_ylabel("total reward")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_series(path, x, y, xlabel: str, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(x, y, lw=1.0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    _save(fig, path)


def plot_fd(path, scatter: dict, curves: dict) -> None:
    """``scatter``: label -> (rho, q); ``curves``: label -> (rho, q)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, (label, (rho, q)) in enumerate(scatter.items()):
        ax.scatter(rho, q, s=4, alpha=0.5, color=f"C{k}", label=label)
    for k, (label, (rho, q)) in enumerate(curves.items()):
        ax.plot(rho, q, lw=1.2, color=str(0.1 + 0.25 * k), label=label)
    ax.set_xlabel("density [veh/km/lane]")
    ax.set_ylabel("flow [veh/h/lane]")
    ax.legend(fontsize=7)
    _save(fig, path)
