"""Matplotlib summaries of runs; all writers headless, PNG only."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def curve_heatmap(curve, path, title="population curve"):
    """Space-time density map (1D) or the terminal slice (2D)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    grid, tgrid = curve.grid, curve.tgrid
    if grid.dim == 1:
        img = ax.imshow(
            curve.weights.T / grid.cell_volume,
            origin="lower",
            aspect="auto",
            extent=[0.0, tgrid.horizon, -grid.half_width, grid.half_width],
            cmap="viridis",
        )
        ax.set_xlabel("t")
        ax.set_ylabel("x")
    else:
        n = grid.npts
        img = ax.imshow(
            curve.weights[-1].reshape(n, n).T / grid.cell_volume,
            origin="lower",
            extent=[-grid.half_width, grid.half_width] * 2,
            cmap="viridis",
        )
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        title = title + " (terminal slice)"
    fig.colorbar(img, ax=ax, label="density")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def moment_envelope_plot(curve, lyap, R, path):
    """V-moment of the curve against the exponential envelope R e^{Mt}."""
    times = curve.tgrid.times
    v_vals = curve.moment(lambda x: lyap.V(x))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(times, v_vals, label="moment of the curve")
    if R is not None:
        ax.plot(times, R * np.exp(lyap.M * times), "--", label="envelope")
    ax.set_xlabel("t")
    ax.set_ylabel("integral of V")
    ax.legend()
    ax.set_title("moment versus envelope")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def residual_history_plot(result, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(np.arange(len(result.residuals)), result.residuals, marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("transport residual")
    ax.set_title("fixed-point residual history")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def certificate_plot(cert, path):
    """Bar chart of challenger gaps; positive bars would break the certificate."""
    fig, ax = plt.subplots(figsize=(8, 4))
    gaps = [c.gap for c in cert.challengers]
    labels = [c.label for c in cert.challengers]
    colors = ["tab:red" if g > cert.tolerance else "tab:blue" for g in gaps]
    ax.bar(np.arange(len(gaps)), gaps, color=colors)
    ax.axhline(cert.tolerance, color="k", linestyle="--", linewidth=1, label="tolerance")
    ax.set_xticks(np.arange(len(gaps)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("candidate cost minus challenger cost")
    ax.set_title("exploitability audit")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def superposition_plot(times, gaps, tol, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(times, gaps, marker="s")
    ax.axhline(tol, color="k", linestyle="--", linewidth=1, label="tolerance")
    ax.set_xlabel("t")
    ax.set_ylabel("transport distance")
    ax.set_title("particle cloud versus grid curve")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
