"""Report figures (Agg backend, PNG output)."""
from __future__ import annotations

import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _imshow(ax, field, title):
    a = np.asarray(field)
    lim = np.max(np.abs(a)) or 1.0
    ax.imshow(a, cmap="gray", vmin=-lim, vmax=lim, extent=(0, 1, 1, 0))
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])


def save_field(path, field, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    _imshow(ax, field, title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def image_panel(path, images: dict) -> None:
    """Grid of named images with a symmetric gray scale each."""
    names = list(images)
    cols = min(4, len(names))
    rows = -(-len(names) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 3 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, name in zip(axes.ravel(), names):
        ax.axis("on")
        _imshow(ax, images[name], name)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def mse_curves(path, rows, masked: bool = True) -> None:
    """Relative MSE against parameter count, one line per preconditioner."""
    col = 5 if masked else 6
    series = defaultdict(list)
    for row in rows:
        series[row[0]].append((row[1], row[col]))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, pts in sorted(series.items()):
        pts.sort()
        ax.plot([p for p, _ in pts], [v for _, v in pts], marker="o", label=name)
    ax.axhline(1.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("number of parameters p")
    ax.set_ylabel("relative MSE" + (" (masked)" if masked else ""))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def generalization_bars(path, rows) -> None:
    by_name = defaultdict(list)
    for seed, name, p, err in rows:
        by_name[name].append(err)
    names = sorted(by_name)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    means = [np.mean(by_name[k]) for k in names]
    ax.bar(names, means, color="0.6")
    for i, k in enumerate(names):
        ax.plot([i] * len(by_name[k]), by_name[k], "k.", ms=4)
    ax.set_ylabel("generalization error")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def misfit_curve(path, history) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(np.arange(len(history)), history)
    ax.set_xlabel("gradient step")
    ax.set_ylabel("misfit")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def sweep_plot(path, results) -> None:
    """Median and max relative deviation of ``M`` against rank, per basis size."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    by_p = defaultdict(list)
    for res in results:
        by_p[(res.recipe, res.p)].append(res)
    for (recipe, p), group in sorted(by_p.items()):
        group.sort(key=lambda r: r.r)
        rs = [g.r for g in group]
        ax.loglog(rs, [g.median for g in group], marker="o", label=f"{recipe} p={p} median")
        ax.loglog(rs, [g.deviations.max() for g in group], ls=":", label=f"{recipe} p={p} max")
    ax.set_xlabel("rank r")
    ax.set_ylabel("||M - EM|| / ||EM||")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def render_report(out_dir: str, result) -> list[str]:
    """Write the standard figure set of an experiment; returns the file names."""
    cfg = result.config
    top = max(s.p for s in cfg.specs())
    images = {
        "reflectivity": result.images["reflectivity"],
        "migrated": result.images["migrated"],
        "reference (gradient descent)": result.images["reference"],
    }
    for key, img in result.images.items():
        if isinstance(key, tuple) and key[1] == top:
            images[f"{key[0]}, p={top}"] = img
    written = []
    for name, fn, arg in (
        ("images.png", image_panel, images),
        ("mse_masked.png", lambda p, r: mse_curves(p, r, True), result.rows),
        ("mse_full.png", lambda p, r: mse_curves(p, r, False), result.rows),
        ("misfit.png", misfit_curve, result.history),
    ):
        fn(os.path.join(out_dir, name), arg)
        written.append(name)
    if result.generalization:
        generalization_bars(os.path.join(out_dir, "generalization.png"), result.generalization)
        written.append("generalization.png")
    return written
