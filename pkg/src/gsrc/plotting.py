"""Static figures for the CLI report path.

All figures go through :func:`save`, which uses the Agg backend and strips
the software/date metadata so reruns produce byte-identical PNGs.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_META = {"Software": None}


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_attractor(traj, path, title="driver trajectory"):
    s = traj.states
    fig = plt.figure(figsize=(5, 4))
    if traj.dim >= 3:
        ax = fig.add_subplot(projection="3d")
        ax.plot(s[:, 0], s[:, 1], s[:, 2], lw=0.3)
        ax.set_zlabel("u2")
    else:
        ax = fig.add_subplot()
        ax.plot(traj.times, s[:, 0], lw=0.5)
    ax.set_xlabel("u0")
    ax.set_ylabel("u1")
    ax.set_title(title)
    return save(fig, path)


def plot_gs(report, path):
    """Replica scatter (left) and log distance against time (right)."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.8))
    xy = np.asarray(report.scatter_sample)
    if xy.size:
        a.plot(xy[:, 0], xy[:, 1], ".", ms=2)
        lim = [float(xy.min()), float(xy.max())]
        a.plot(lim, lim, "k--", lw=0.6)
    a.set_xlabel(r"$\chi(r_A)$")
    a.set_ylabel(r"$\chi(r_B)$")
    a.set_title("GS" if report.converged else "no GS")
    if len(report.times):
        d = np.maximum(np.asarray(report.distances), 1e-300)
        b.semilogy(report.times, d, lw=0.8)
        b.axhline(report.tolerance_used, color="r", ls=":", lw=0.8)
    b.set_xlabel("t")
    b.set_ylabel(r"$\|r_A - r_B\| / \sqrt{N}$")
    fig.tight_layout()
    return save(fig, path)


def plot_forecast(truth, prediction, path, lambda1, threshold=None, valid=None):
    """Component-wise forecast against truth, time in Lyapunov units."""
    n = min(len(truth), len(prediction))
    t = np.arange(n) * truth.dt * lambda1
    D = truth.dim
    fig, axes = plt.subplots(D, 1, figsize=(7, 1.4 * D + 0.8), sharex=True, squeeze=False)
    for i, ax in enumerate(axes[:, 0]):
        ax.plot(t, truth.states[:n, i], "k", lw=0.9, label="truth")
        ax.plot(t, prediction.states[:n, i], "r--", lw=0.9, label="RC")
        if valid is not None:
            ax.axvline(valid, color="b", lw=0.6)
        ax.set_ylabel(f"u{i}")
    axes[0, 0].legend(loc="upper right", fontsize=7)
    axes[-1, 0].set_xlabel(r"$\lambda_1 t$")
    fig.tight_layout()
    return save(fig, path)


def plot_spectrum(report, path):
    """Driver versus RC exponents and the RC running-mean history."""
    drv = np.asarray(report.driver_spectrum.exponents)
    rc = np.asarray(report.rc_spectrum.exponents)
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.8))
    a.plot(np.arange(1, len(rc) + 1), rc, "o", label="RC")
    a.plot(np.arange(1, len(drv) + 1), drv, "x", ms=9, label="driver")
    a.axhline(0.0, color="k", lw=0.5)
    a.set_xlabel("index")
    a.set_ylabel("exponent")
    a.legend(fontsize=8)
    h = report.rc_spectrum.convergence_history
    if len(h):
        b.plot(report.rc_spectrum.history_times, h[:, : len(drv)], lw=0.8)
    b.set_xlabel("t")
    b.set_ylabel("running estimate")
    fig.tight_layout()
    return save(fig, path)


def plot_sr_sweep(points, path, lambda1_driver):
    """Skill, leading RC exponent, and remaining exponents against SR."""
    sr = np.array([p.sr for p in points])
    vt = np.array([p.mean_valid_time for p in points])
    sd = np.array([p.std_valid_time for p in points])
    l1 = np.array([p.lambda1_rc for p in points])
    fig, axes = plt.subplots(3, 1, figsize=(6, 7.5), sharex=True)
    axes[0].errorbar(sr, vt, yerr=sd, fmt="o-", capsize=2)
    axes[0].set_ylabel(r"valid time ($\lambda_1 t$)")
    axes[1].plot(sr, l1, "o-", label="RC")
    axes[1].axhline(lambda1_driver, color="k", ls="--", lw=0.8, label="driver")
    axes[1].set_ylabel(r"$\lambda_1$")
    axes[1].legend(fontsize=8)
    k = max((len(p.exponents) for p in points), default=0)
    for j in range(1, k):
        vals = [p.exponents[j] if len(p.exponents) > j else math.nan for p in points]
        axes[2].plot(sr, vals, ".-", lw=0.7)
    axes[2].axhline(0.0, color="k", lw=0.5)
    axes[2].set_ylabel(r"$\lambda_{2..k}$")
    axes[2].set_xlabel("spectral radius")
    fig.tight_layout()
    return save(fig, path)


def _grid(results, value):
    srs = sorted({r.coords[0] for r in results})
    pnzs = sorted({r.coords[1] for r in results})
    z = np.full((len(pnzs), len(srs)), np.nan)
    for i, p in enumerate(pnzs):
        for j, s in enumerate(srs):
            vals = [value(r) for r in results if r.coords[0] == s and r.coords[1] == p]
            vals = [v for v in vals if v is not None and not math.isnan(v)]
            if vals:
                z[i, j] = float(np.mean(vals))
    return srs, pnzs, z


def plot_search_heatmaps(results, path):
    """GS pass fraction and mean valid time over the (SR, pnz) plane."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    for ax, fn, title in (
        (a, lambda r: float(r.gs_passed) if r.gs is not None else math.nan, "GS pass fraction"),
        (b, lambda r: r.mean_valid_time, r"mean valid time ($\lambda_1 t$)"),
    ):
        srs, pnzs, z = _grid(results, fn)
        im = ax.imshow(z, origin="lower", aspect="auto", cmap="viridis")
        ax.set_xticks(range(len(srs)), [f"{v:g}" for v in srs])
        ax.set_yticks(range(len(pnzs)), [f"{v:g}" for v in pnzs])
        ax.set_xlabel("spectral radius")
        ax.set_ylabel("pnz")
        ax.set_title(title)
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return save(fig, path)
