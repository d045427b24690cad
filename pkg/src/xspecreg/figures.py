"""Figure rendering for the report paths; files land next to the CSV/JSON."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _style(ax):
    ax.grid(alpha=0.25, linestyle="--")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)


def save_ace_histogram(ace_values, path, thresholds=(2.0, 5.0, 10.0, 25.0)) -> Path:
    """Log-scale ACE histogram; failed pairs (inf) reported in the title."""
    vals = np.asarray([v for v in ace_values if math.isfinite(v)], dtype=np.float64)
    n_failed = len(list(ace_values)) - vals.size
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    if vals.size:
        lo = max(min(vals.min(), 1e-3), 1e-12)
        hi = max(vals.max(), 10 * lo)
        bins = np.logspace(np.log10(lo), np.log10(hi * 1.01), 40)
        ax.hist(vals, bins=bins, color="#1d3557", alpha=0.8)
        ax.set_xscale("log")
    for t in thresholds:
        ax.axvline(t, color="#e63946", linestyle=":", linewidth=1.0)
    ax.set_xlabel("average corner error (px)")
    ax.set_ylabel("pairs")
    ax.set_title(f"ACE distribution ({vals.size} ok, {n_failed} failed)")
    _style(ax)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_success_fractions(thresholds, fractions, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    x = np.arange(len(thresholds))
    ax.bar(x, fractions, width=0.6, color="#2a9d8f")
    ax.set_xticks(x)
    ax.set_xticklabels([f"<{t:g}px" for t in thresholds])
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("fraction of pairs")
    ax.set_title("registration success by ACE threshold")
    _style(ax)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_loss_curves(history: list[dict], path) -> Path:
    """Per-term loss curves from a toy training history."""
    fig, ax = plt.subplots(figsize=(6.8, 4.2))
    steps = [h["step"] for h in history]
    colors = {
        "corner": "#e63946",
        "frobenius": "#f4a261",
        "transfer": "#1d3557",
        "descriptor": "#2a9d8f",
        "detector": "#6d597a",
        "total": "black",
    }
    for key, color in colors.items():
        vals = [h[key] for h in history]
        if any(v > 0 for v in vals):
            ax.plot(steps, vals, label=key, color=color, linewidth=1.4)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", framealpha=0.9)
    _style(ax)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_averaging_report(results: list[dict], path) -> Path:
    """Corner loss vs residual match error for both demo objectives."""
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    markers = {"corner": ("o", "#e63946"), "transfer": ("s", "#1d3557")}
    for objective, (marker, color) in markers.items():
        xs = [
            max(r["corner_loss_final"], 1e-12)
            for r in results
            if r["objective"] == objective
        ]
        ys = [
            r["mean_transfer_error_final_px"]
            for r in results
            if r["objective"] == objective
        ]
        if xs:
            ax.scatter(xs, ys, marker=marker, color=color, label=f"{objective} objective", alpha=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("final corner loss")
    ax.set_ylabel("final mean match error (px)")
    ax.set_title("match errors offset each other under a homography-only loss")
    ax.legend(loc="center left", framealpha=0.9)
    _style(ax)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
