"""Matplotlib figures for the CLI reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGSIZE = (6.0, 4.0)
DPI = 120


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_census(table, delta_hat, path):
    """log #[G]_T against T, with the reference slope delta_hat."""
    T = np.array([r["T"] for r in table])
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for key, style in (("total", "o-"), ("rank_one", "s--")):
        N = np.array([r[key] for r in table], dtype=float)
        pos = N > 0
        ax.plot(T[pos], np.log(N[pos]), style, label=key.replace("_", " "))
    if delta_hat is not None:
        N = np.array([r["total"] for r in table], dtype=float)
        pos = N > 0
        if pos.any():
            i = np.flatnonzero(pos)[-1]
            ref = np.log(N[i]) + delta_hat * (T - T[i]) - np.log(T / T[i])
            ax.plot(T, ref, ":", color="gray", label=r"$\hat\delta T - \log T$")
    ax.set_xlabel("T")
    ax.set_ylabel("log count")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_orbit_growth(dist, fit, path):
    """log #{d(o, g o) <= r} with the fitted window."""
    r = np.linspace(0, float(np.max(dist)), 200)
    N = np.searchsorted(np.sort(dist), r, side="right")
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(r, np.log(N), label="orbit count")
    if fit is not None:
        lo, hi = fit["window"]
        ax.axvspan(lo, hi, color="C1", alpha=0.15, label=f"fit window, slope {fit['delta_hat']:.3f}")
    ax.set_xlabel("r")
    ax.set_ylabel("log N(r)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_shadows(report, path):
    """log of shadow mass times exp(delta d) against d."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    pos = report.mass > 0
    ax.plot(report.dist[pos], np.log(report.ratio[pos]), ".", ms=3)
    s = report.summary
    if np.isfinite(s.get("slope", np.nan)):
        d = np.sort(report.dist[pos])
        mid = np.mean(np.log(report.ratio[pos]))
        ax.plot(d, mid + s["slope"] * (d - d.mean()), "-", color="C1", label=f"slope {s['slope']:.3f}")
        ax.legend()
    ax.set_xlabel("d(o, g o)")
    ax.set_ylabel("log ratio")
    ax.set_title(f"R = {report.R:.2f}")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_atoms(domain, directions, weights, path):
    """Atom directions in the affine chart, marker area proportional to weight."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    A = domain.affine(directions)
    ax.scatter(A[:, 0], A[:, 1], s=2000 * weights / weights.max() + 1, alpha=0.5)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return _save(fig, path)


def plot_mixing(rows, path):
    t = np.array([r["t"] for r in rows])
    C = np.array([r["C"] for r in rows])
    se = np.array([r["se"] for r in rows])
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.errorbar(t, C, yerr=2 * se, fmt="o-", capsize=3, label="C(t)")
    ax.axhline(rows[0]["mA"] * rows[0]["mB"], color="gray", ls=":", label="m(A) m(B)")
    ax.set_xlabel("t")
    ax.set_ylabel("correlation")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_equidistribution(rows, path):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for name in dict.fromkeys(r["observable"] for r in rows):
        rs = [r for r in rows if r["observable"] == name]
        T = [r["T"] for r in rs]
        ax.errorbar(T, [r["discrepancy"] for r in rs], yerr=[2 * r["combined_se"] for r in rs],
                    fmt="o-", capsize=3, label=name)
    ax.set_xlabel("T")
    ax.set_ylabel("|closed geodesic mean - BM mean|")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_entropy(result, delta_hat, path):
    t = np.array(result["t"])
    N = np.array(result["count"], dtype=float)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(t, np.log(N), "o-", label=f"growth {result['estimate']:.3f}")
    if delta_hat is not None:
        ax.plot(t, np.log(N[0]) + delta_hat * (t - t[0]), ":", color="gray", label=rf"slope $\hat\delta$ = {delta_hat:.3f}")
    ax.set_xlabel("t")
    ax.set_ylabel("log N(t, eps)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)
