"""Matplotlib figures rendered next to the CSV/JSON reports.

Every plot is derived from the same arrays the delimited outputs carry, so
figures can always be regenerated downstream from the frozen CSV schemas.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_error_histogram", "plot_error_vs_angle", "plot_training_curves"]


def plot_error_histogram(final_errors_deg, path, title="Final angle error") -> Path:
    """Histogram of controller final angle errors, one bar per degree-ish bin."""
    errors = np.asarray(final_errors_deg, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    upper = max(5.0, float(np.ceil(errors.max())) if len(errors) else 5.0)
    ax.hist(errors, bins=np.linspace(0.0, upper, 41), color="#3b6ea5", edgecolor="white")
    ax.axvline(float(np.median(errors)), color="#c44e52", linestyle="--",
               label=f"median {np.median(errors):.2f}\N{DEGREE SIGN}")
    ax.set_xlabel("final angle error (deg)")
    ax.set_ylabel("trials")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_error_vs_angle(true_angles_deg, errors_deg, bin_edges, bin_means, path,
                        ylabel="angle error (deg)") -> Path:
    """Per-sample scatter with binned means overlaid, error against true angle."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(true_angles_deg, errors_deg, s=8, alpha=0.3, color="#3b6ea5",
               label="samples")
    centers = (np.asarray(bin_edges[:-1]) + np.asarray(bin_edges[1:])) / 2.0
    valid = ~np.isnan(bin_means)
    ax.plot(np.asarray(centers)[valid], np.asarray(bin_means)[valid], "o-",
            color="#c44e52", label="binned mean")
    ax.set_xlabel("true rotation angle (deg)")
    ax.set_ylabel(ylabel)
    ax.set_title("Estimator error vs. rotation angle")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_training_curves(metrics, path) -> Path:
    """Train loss and validation mean angle error per epoch on twin axes."""
    epochs = [m.epoch for m in metrics]
    fig, ax_loss = plt.subplots(figsize=(6, 4))
    ax_loss.plot(epochs, [m.train_loss for m in metrics], "o-", color="#3b6ea5",
                 label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss", color="#3b6ea5")
    ax_err = ax_loss.twinx()
    ax_err.plot(epochs, [m.val_mean_angle_deg for m in metrics], "s-",
                color="#c44e52", label="val mean angle error")
    ax_err.set_ylabel("val mean angle error (deg)", color="#c44e52")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
