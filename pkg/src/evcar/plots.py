"""Figures for scenario reports (written to files, never shown)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .shooting import get_structure, sample_arcs  # noqa: E402

_COLORS = {"S1": "C0", "S2": "C1", "S3": "C2", "S4": "C3", "S5": "C4"}


def plot_trajectories(path: Path, trajs) -> None:
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=False)
    labels = ("current x1", "position x2", "speed x3", "switching k7 p1")
    for name, mc, st, y in trajs:
        t_all, z_all = [], []
        for _, t, z in sample_arcs(mc, st, y, 100):
            t_all.append(t)
            z_all.append(z)
        t = np.concatenate(t_all)
        z = np.concatenate(z_all)
        for ax, comp in zip(axes.flat[:3], (0, 1, 2)):
            ax.plot(t, z[:, comp], lw=1, label=name)
        axes.flat[3].plot(t, mc.k[6] * z[:, 3], lw=1, label=name)
    for ax, lab in zip(axes.flat, labels):
        ax.set_title(lab)
        ax.set_xlabel("t")
        ax.grid(alpha=0.3)
    axes.flat[0].legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_slice(path: Path, rows) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for sid in sorted({r["structure"] for r in rows}):
        rs = [r for r in rows if r["structure"] == sid]
        v = [r["lambda"] for r in rs]
        ax1.plot(v, [r["tf"] for r in rs], ".", ms=3, color=_COLORS[sid],
                 label=f"{sid} {get_structure(sid).label}")
        for key, marker in (("nu2", "o"), ("nu3", "s"), ("nu4", "^"), ("nu5", "v")):
            vals = [r.get(key) for r in rs]
            if any(x is not None for x in vals):
                ax2.plot(v, vals, marker, ms=2, color=_COLORS[sid], label=f"{sid} {key}")
    ax1.set_xlabel("v_max [km/h]")
    ax1.set_ylabel("t_f")
    ax1.legend(fontsize=7)
    ax2.set_xlabel("v_max [km/h]")
    ax2.set_ylabel("jump")
    ax2.legend(fontsize=6)
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_drift(path: Path, legs) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for leg in legs:
        lam = [p.lam for p in leg.path.points]
        res = [max(p.residual, 1e-17) for p in leg.path.points]
        ax.semilogy(lam, res, ".-", ms=2, lw=0.8, label=leg.name)
    ax.axhline(1e-4, color="k", ls="--", lw=0.8)
    ax.set_xlabel("homotopy parameter")
    ax.set_ylabel("residual norm (uncorrected)")
    ax.set_xscale("log")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_imax_leg(path: Path, legs) -> None:
    leg = next((g for g in legs if g.name == "h2a"), None)
    if leg is None:
        return
    st = get_structure("S2")
    lam = np.array([p.lam for p in leg.path.points])
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("t1", "t2", "tf"):
        ax.plot(lam, [st.get(p.y, key) for p in leg.path.points], lw=1, label=key)
    ax.plot(lam, [st.get(p.y, "nu2") for p in leg.path.points], lw=1, label="nu2")
    ax.set_xlabel("i_max [A]")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_all(out: Path, result: dict, trajs) -> None:
    out = Path(out)
    if trajs:
        plot_trajectories(out / "trajectories.png", trajs)
    if result["rows"]:
        plot_slice(out / "slice.png", result["rows"])
    if result["legs"]:
        plot_drift(out / "drift.png", result["legs"])
        plot_imax_leg(out / "imax_leg.png", result["legs"])
