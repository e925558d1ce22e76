"""File-only figures for the command-line reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_profile(path, profile, fit=None, scan=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    y = profile.y_prime * 1e6
    for i, color in enumerate(("tab:blue", "tab:red")):
        ax.plot(y, profile.intensity[i], color=color, label=f"ion {i + 1}")
        if scan is not None:
            ys, counts = scan
            ax.plot(ys * 1e6, counts[i], ".", color=color, ms=3, alpha=0.6)
        if fit is not None and scan is not None:
            ax.plot(scan[0] * 1e6, fit.evaluate(scan[0])[i], "--", color=color, lw=1)
    ax.set_xlabel("cavity displacement y' (um)")
    ax.set_ylabel("relative intensity")
    ax.set_title(f"phase difference {profile.phase_difference / np.pi:.2f} pi")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_fidelity_curve(path, curve, threshold: float = 0.5) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    rows = [b for b in curve if b.count > 0]
    mid = np.array([0.5 * (b.low + b.high) for b in rows]) * 1e6
    half = np.array([0.5 * (b.high - b.low) for b in rows]) * 1e6
    ax.errorbar(mid, [b.mean for b in rows], xerr=half, yerr=[b.stderr for b in rows],
                fmt="o", capsize=2)
    ax.axhline(threshold, color="gray", lw=0.8, ls=":")
    ax.set_xscale("log")
    ax.set_xlabel("detection interval T (us)")
    ax.set_ylabel("fidelity with Psi+")
    ax.set_ylim(0, 1.05)
    _save(fig, path)


def plot_parity(path, two_pulse, one_pulse) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    grid = np.linspace(0, np.pi, 200)
    for curve, label, color in ((two_pulse, "two pulses", "tab:blue"),
                                (one_pulse, "one pulse", "tab:orange")):
        ax.errorbar(curve.phases, curve.values, yerr=curve.sigmas, fmt="o", ms=3,
                    color=color, label=label)
        ax.plot(grid, curve.evaluate(grid), color=color, lw=1)
    ax.set_xlabel("analysis phase (rad)")
    ax.set_ylabel("parity")
    ax.set_ylim(-1.1, 1.1)
    ax.legend(frameon=False)
    _save(fig, path)


def plot_readout(path, counts, model) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(counts, bins=80, density=True, alpha=0.5, color="gray")
    s = np.linspace(np.min(counts), np.max(counts), 500)
    dens = model.component_densities(s) * np.asarray(model.weights)[:, None]
    for n, d in enumerate(dens):
        ax.plot(s, d, label=f"{n} bright")
    ax.plot(s, dens.sum(axis=0), "k", lw=1)
    ax.set_xlabel("counts")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    _save(fig, path)
