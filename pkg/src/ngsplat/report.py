"""Report emission: line-delimited metric records, transmittance PNGs and
matplotlib summary figures rendered alongside the delimited output."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .benchmark import MetricsReport


def write_report(report: MetricsReport, path) -> Path:
    """One JSON record per view followed by an aggregate record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for row in report.rows():
        lines.append(json.dumps({"record": "view", **row}, sort_keys=True))
    lines.append(json.dumps({"record": "aggregate", **report.aggregate()}, sort_keys=True))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_train_log(log: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(json.dumps(e, sort_keys=True) for e in log) + "\n")
    return path


def write_grayscale_png(image: np.ndarray, path) -> Path:
    """Save a [0,1] map as an 8-bit grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
    return path


def write_transmittance_maps(t_maps, names, out_dir) -> list:
    out_dir = Path(out_dir)
    return [
        write_grayscale_png(t, out_dir / f"transmittance_{name}.png")
        for t, name in zip(t_maps, names)
    ]


def write_metrics_figure(report: MetricsReport, path) -> Path:
    """Bar chart of per-view PSNR/PSNR* and SOS."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = report.view_names
    x = np.arange(len(names))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.bar(x - 0.2, report.psnr, width=0.4, label="PSNR")
    if report.psnr_star:
        ax1.bar(x + 0.2, report.psnr_star, width=0.4, label="PSNR*")
    ax1.set_xticks(x)
    ax1.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax1.set_ylabel("dB")
    ax1.legend()
    ax1.set_title("Per-view PSNR (starred = with infill)")
    if report.sos:
        ax2.bar(x, report.sos, color="tab:green")
        ax2.axhline(report.mean_sos, color="k", linestyle="--", linewidth=0.8)
    ax2.set_ylim(0, 1.05)
    ax2.set_xticks(x)
    ax2.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax2.set_title("Per-view SOS")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_loss_figure(log: list, path) -> Path:
    """Training curves (total / photometric / alpha losses, splat counts)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    its = [e["iteration"] for e in log]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("loss", "photometric", "alpha_loss"):
        vals = [e.get(key) for e in log]
        if any(v is not None for v in vals):
            ax1.plot(its, vals, label=key, linewidth=0.9)
    ax1.set_xlabel("iteration")
    ax1.set_yscale("log")
    ax1.legend()
    ax1.set_title("Losses")
    ax2.plot(its, [e.get("n_surface", 0) for e in log], label="surface")
    ax2.plot(its, [e.get("n_noise", 0) for e in log], label="noise")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("gaussians")
    ax2.legend()
    ax2.set_title("Counts")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
