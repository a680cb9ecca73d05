"""Run reports: delimited summaries plus matplotlib figures.

Reads a completed run directory (manifest + artifacts) and writes
``report.csv`` with the per-stage numeric results next to diagnostic figures
(depth alignment scatter, center-weight map, image panel).
"""

from __future__ import annotations

import csv
import pathlib

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .config import SceneConfig
from .depth import compute_center_weights
from .imio import load_pfm, load_png
from .pipeline import load_manifest

__all__ = ["write_report"]


def _flatten(prefix, value, rows):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, rows)
    elif isinstance(value, (list, tuple)):
        rows.append((prefix, " ".join(str(v) for v in value)))
    else:
        rows.append((prefix, value))


def _alignment_figure(out: pathlib.Path, manifest) -> pathlib.Path | None:
    est_path = out / "estimated_depth.pfm"
    ref_path = out / "reference_depth.pfm"
    if not (est_path.exists() and ref_path.exists()):
        return None
    est = load_pfm(est_path).ravel()
    ref = load_pfm(ref_path).ravel()
    numerics = manifest["stages"]["depth"]["numerics"]
    a, b = numerics["a"], numerics["b"]

    fig, ax = plt.subplots(figsize=(5, 4))
    step = max(1, est.size // 4000)
    ax.plot(est[::step], ref[::step], ".", ms=2, alpha=0.4, label="pixels")
    xs = np.linspace(est.min(), est.max(), 50)
    ax.plot(xs, a * xs + b, "r-", lw=1.5, label=f"fit a={a:.3g}, b={b:.3g}")
    ax.set_xlabel("estimated depth (non-metric)")
    ax.set_ylabel("rendered depth")
    ax.set_title("affine depth alignment")
    ax.legend()
    fig.tight_layout()
    path = out / "report_depth_alignment.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _weights_figure(out: pathlib.Path, config: SceneConfig) -> pathlib.Path:
    w, h = config.camera.image_size
    weights = compute_center_weights((h, w), config.bbox.center)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(weights, cmap="viridis")
    fig.colorbar(im, ax=ax, label="fit weight")
    ax.set_title("center-weighted alignment weights")
    fig.tight_layout()
    path = out / "report_weights.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _panel_figure(out: pathlib.Path) -> pathlib.Path | None:
    panels = [("reference.png", "reference"), ("edited.png", "edited"),
              ("fused_reference.png", "fused")]
    available = [(p, t) for p, t in panels if (out / p).exists()]
    if not available:
        return None
    fig, axes = plt.subplots(1, len(available), figsize=(3.2 * len(available), 3.2))
    if len(available) == 1:
        axes = [axes]
    for ax, (p, title) in zip(axes, available):
        ax.imshow(load_png(out / p))
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    path = out / "report_views.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_report(config: SceneConfig, out_dir) -> list[pathlib.Path]:
    """Write report.csv and figures; returns the paths produced."""
    out = pathlib.Path(out_dir)
    manifest = load_manifest(out)
    produced = []

    rows = []
    for stage, entry in manifest.get("stages", {}).items():
        _flatten("", entry.get("numerics", {}), stage_rows := [])
        for key, value in stage_rows:
            rows.append((stage, key, value))
        rows.append((stage, "elapsed_s", entry.get("elapsed_s")))
    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "metric", "value"])
        writer.writerows(rows)
    produced.append(csv_path)

    if "depth" in manifest.get("stages", {}):
        fig = _alignment_figure(out, manifest)
        if fig:
            produced.append(fig)
    produced.append(_weights_figure(out, config))
    panel = _panel_figure(out)
    if panel:
        produced.append(panel)
    return produced
