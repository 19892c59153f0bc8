"""Static figures for run and sweep reports (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def variance_profile(taps, variance, path, selected=None):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.semilogy(taps, np.maximum(variance, 1e-30), "o-", ms=3)
    for n in selected or []:
        ax.axvline(n, color="C3", lw=0.8, ls="--")
    ax.set_xlabel("tap index")
    ax.set_ylabel("temporal variance")
    ax.set_title("Tap variance profile")
    return _save(fig, path)


def shift_curves(alignments, path):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for k, al in enumerate(alignments):
        if al.shift_grid is None or len(al.shift_grid) < 2:
            continue
        ax.plot(al.shift_grid, al.shift_variance, ".-", ms=3, label=f"target {k} (tap {al.tap_index})")
        ax.axvline(al.fractional_shift, color=f"C{k}", lw=0.8, ls="--")
    ax.set_xlabel("shift (taps)")
    ax.set_ylabel("variance of shifted tap")
    ax.set_title("Variance versus fractional shift")
    if alignments:
        ax.legend(fontsize=8)
    return _save(fig, path)


def trajectory(alignments, path, max_points=4000):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for k, al in enumerate(alignments):
        z = al.motion_signal
        step = max(1, len(z) // max_points)
        ax.plot(z.real[::step], z.imag[::step], ".", ms=1.5, label=f"target {k}")
        ax.plot(al.circle_centre.real, al.circle_centre.imag, "x", color=f"C{k}")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("real")
    ax.set_ylabel("imag")
    ax.set_title("Aligned tap in the complex plane")
    if alignments:
        ax.legend(fontsize=8, markerscale=4)
    return _save(fig, path)


def sweep_errors(x, ys, labels, xlabel, path):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for y, lab in zip(ys, labels):
        ax.plot(x, y, "o-", label=lab)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("mean absolute error")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)
