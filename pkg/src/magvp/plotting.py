"""PNG figures for diagnostics series, check reports and stability traces."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .diagnostics import DiagnosticsSeries  # noqa: E402
from .inequalities import EnvelopeReport  # noqa: E402
from .stability import StabilityTrace  # noqa: E402


def _save(fig, path: str | Path, config_hash: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Description": f"config_hash={config_hash}"})
    plt.close(fig)


def plot_series(series: DiagnosticsSeries, path: str | Path, config_hash: str = "") -> None:
    t = series.array("times")
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for n in series.orders:
        axes[0].semilogy(t, series.array("M", n), label=f"M{n}")
        axes[1].semilogy(t, series.array("N", n), label=f"N{n}")
        axes[2].semilogy(t, series.array("L", n), label=f"L{n}")
    for ax, title in zip(axes, ("velocity moments", "position moments", "Eulerian moments")):
        ax.set_title(title)
        ax.set_xlabel("t")
        ax.legend(fontsize=7)
    _save(fig, path, config_hash)


def _plot_one(ax, rep: EnvelopeReport) -> None:
    t = np.asarray(rep.times, dtype=float)
    order = np.argsort(t, kind="stable")
    ax.plot(t[order], np.asarray(rep.lhs)[order], "o-", ms=3, label="measured")
    ax.plot(t[order], np.asarray(rep.rhs)[order], "--", label="bound")
    ax.set_title(f"{rep.check} [{rep.status}]", fontsize=9)
    ax.set_xlabel("t")
    if np.all(np.asarray(rep.rhs) > 0) and np.all(np.asarray(rep.lhs) > 0):
        ax.set_yscale("log")
    ax.legend(fontsize=7)


def plot_reports(reports: list[EnvelopeReport], path: str | Path, config_hash: str = "") -> None:
    panels = []
    for r in reports:
        if r.parts:
            panels += [p for p in r.parts if p.lhs and not p.informational]
        elif r.lhs:
            panels.append(r)
    if not panels:
        return
    cols = min(3, len(panels))
    rows = -(-len(panels) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3.2 * rows), squeeze=False)
    for ax, rep in zip(axes.ravel(), panels):
        _plot_one(ax, rep)
    for ax in axes.ravel()[len(panels) :]:
        ax.axis("off")
    _save(fig, path, config_hash)


def plot_trace(trace: StabilityTrace, envelope: EnvelopeReport | None, path: str | Path, config_hash: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    t = np.asarray(trace.times)
    D = np.asarray(trace.D, dtype=float)
    ax.semilogy(t, trace.Wpp, "o-", ms=3, label="W_p^p")
    ok = np.isfinite(D) & (D > 0)
    ax.semilogy(t[ok], D[ok], "s-", ms=3, label="D_p")
    if envelope is not None and envelope.rhs:
        ax.semilogy(envelope.times, envelope.rhs, "--", label="envelope")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    _save(fig, path, config_hash)
