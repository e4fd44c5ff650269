"""PNG figures for the CLI reports (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_DPI = 120


def _save(fig, path):
    # fixed metadata keeps the PNG bytes reproducible
    fig.savefig(path, dpi=_DPI, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def height_figure(path, z, pitch: float, title: str = "height (mm)"):
    fig, ax = plt.subplots(figsize=(5, 4))
    extent = (0, z.shape[1] * pitch, z.shape[0] * pitch, 0)
    im = ax.imshow(z, cmap="viridis", extent=extent)
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    _save(fig, path)


def profile_figure(path, z, truth, pitch: float):
    row = z.shape[0] // 2
    x = np.arange(z.shape[1]) * pitch
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(x, z[row], label="reconstructed")
    if truth is not None:
        t = np.asarray(truth, dtype=float)
        ax.plot(x, t[row] - (t - z).mean(), "--", label="truth")
        ax.legend(frameon=False)
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("height (mm)")
    ax.set_title(f"row {row}")
    _save(fig, path)


def reconstruction_figures(out, z, truth, correction, pitch: float):
    out = Path(out)
    height_figure(out / "height.png", z, pitch)
    profile_figure(out / "profile.png", z, truth, pitch)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(correction.source, cmap="Set2", vmin=0, vmax=2, interpolation="nearest")
    ax.set_title("sign reference (0 none, 1 binocular, 2 TOF)")
    fig.colorbar(im, ax=ax, ticks=[0, 1, 2])
    _save(fig, out / "sources.png")
    if truth is not None:
        t = np.asarray(truth, dtype=float)
        diff = z - t
        err = np.abs(diff - diff.mean())
        height_figure(out / "error.png", err, pitch, title="absolute error (mm)")


def convergence_figure(path, traces: dict, ylabel: str = "best fitness", log: bool = True):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, trace in traces.items():
        trace = np.asarray(trace, dtype=float)
        if log:
            trace = np.maximum(trace, np.finfo(float).tiny)
        ax.plot(np.arange(len(trace)), trace, label=name)
    if log:
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    if 1 < len(traces) <= 8:
        ax.legend(frameon=False)
    _save(fig, path)
