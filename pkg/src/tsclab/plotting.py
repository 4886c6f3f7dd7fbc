"""Figures written next to the CLI's tabular output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sim import SimEvent  # noqa: E402

METRIC_LABELS = {"att": "ATT (s)", "aql": "AQL (veh)", "awt": "AWT (s)"}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_comparison(rows: list[dict], path: Path) -> Path:
    """One panel per metric, one bar per controller with a std error bar."""
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.6))
    names = [r["controller"] for r in rows]
    for ax, key in zip(axes, METRIC_LABELS):
        means = [r[key]["mean"] for r in rows]
        stds = [r[key]["std"] for r in rows]
        ax.bar(range(len(rows)), means, yerr=stds, capsize=3, color="#4c72b0")
        ax.set_xticks(range(len(rows)), names, rotation=30, ha="right")
        ax.set_title(METRIC_LABELS[key])
        ax.spines[["top", "right"]].set_visible(False)
    return _save(fig, path)


def plot_fitness_traces(traces: list[list[float]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for r, trace in enumerate(traces):
        ax.step(range(len(trace)), trace, where="post", label=f"run {r}")
    ax.set_xlabel("generation")
    ax.set_ylabel("best fitness")
    ax.legend(frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    return _save(fig, path)


def plot_episode(events: list[SimEvent], horizon: int, path: Path, bin_s: int = 60) -> Path:
    """Vehicles in the network and vehicles stopped, sampled every ``bin_s``."""
    delta_in = [0] * (horizon + 1)
    delta_stop = [0] * (horizon + 1)
    for e in events:
        t = min(e.t, horizon)
        if e.kind == "vehicle-enter":
            delta_in[t] += 1
        elif e.kind == "vehicle-exit":
            delta_in[t] -= 1
        elif e.kind == "vehicle-stop":
            delta_stop[t] += 1
        elif e.kind == "vehicle-go":
            delta_stop[t] -= 1
    xs, inside, stopped = [], [], []
    n = s = 0
    for t in range(horizon + 1):
        n += delta_in[t]
        s += delta_stop[t]
        if t % bin_s == 0:
            xs.append(t)
            inside.append(n)
            stopped.append(s)
    fig, ax = plt.subplots(figsize=(7, 3.4))
    ax.plot(xs, inside, label="in network")
    ax.plot(xs, stopped, label="stopped")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("vehicles")
    ax.legend(frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    return _save(fig, path)
