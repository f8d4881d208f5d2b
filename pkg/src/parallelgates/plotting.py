"""Report figures written next to the CSV outputs (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

ROBUST = "tab:red"
PRIMITIVE = "tab:blue"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(sweep, path, xlabel: str = "g", threshold: float = 0.99) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    x = np.asarray(sweep.axis)
    for data, color, name in ((sweep.F_robust, ROBUST, "robust"), (sweep.F_primitive, PRIMITIVE, "primitive")):
        mean = data.mean(axis=1)
        if data.shape[1] > 1:
            ax.errorbar(x, mean, yerr=[mean - data.min(axis=1), data.max(axis=1) - mean],
                        color=color, marker="o", ms=3, capsize=2, label=name)
        else:
            ax.plot(x, mean, color=color, marker="o", ms=3, label=name)
    ax.axhline(threshold, ls="--", color="gray", lw=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("F")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_decay(series: dict, path) -> Path:
    """``series`` maps a label ("robust"/"primitive") to a :class:`DecaySeries`."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for label, s in series.items():
        color = ROBUST if label == "robust" else PRIMITIVE
        M = np.asarray(s.M_values, dtype=float)
        ax.plot(M, s.F_values, "o", ms=3, color=color, label=label)
        if np.isfinite(s.fit.eps_exp):
            ax.plot(M, np.exp(-s.fit.eps_exp * M), "-", color=color, lw=0.8)
        ax.plot(M, 1 - s.fit.eps_lin * M, ":", color=color, lw=0.8)
    ax.set_xlabel("M")
    ax.set_ylabel("F")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_blocks(reports: dict, path) -> Path:
    """Per-tile fidelities for each pulse family."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    width = 0.4
    for i, (label, rep) in enumerate(reports.items()):
        color = ROBUST if label == "robust" else PRIMITIVE
        idx = np.arange(rep.n_blocks) + (i - 0.5) * width
        ax.bar(idx, rep.fidelities, width=width, color=color, label=f"{label} (min {rep.F4_min:.4f})")
    lo = min(min(r.fidelities) for r in reports.values())
    ax.set_ylim(max(0.0, lo - 0.01), 1.0)
    ax.set_xlabel("tile")
    ax.set_ylabel("F4")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_pulses(pulses, path, unit: float = 2 * np.pi, unit_label: str = "Hz") -> Path:
    fig, axes = plt.subplots(len(pulses), 1, figsize=(5, 1.2 + 1.1 * len(pulses)), sharex=True, squeeze=False)
    for ax, p in zip(axes[:, 0], pulses):
        t = np.append(p.t_start, p.T)
        for c, lab in enumerate(p.labels):
            ax.stairs(p.amplitudes[:, c] / unit, t, label=lab)
        ax.legend(frameon=False, fontsize=6, loc="upper right")
        ax.set_ylabel(unit_label, fontsize=7)
    axes[-1, 0].set_xlabel("t (s)")
    return _save(fig, path)
