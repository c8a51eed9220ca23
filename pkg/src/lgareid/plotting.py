"""Figures for run reports, rendered to files from the run's CSV artifacts.

matplotlib is imported on first use with the non-interactive Agg backend.
"""

from __future__ import annotations

import csv
from pathlib import Path


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _save(fig, out) -> Path:
    out = Path(out)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    _pyplot().close(fig)
    return out


def plot_training_log(rows, out) -> Path:
    plt = _pyplot()
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax, ax_lr) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key, label in (("cb_loss", "class-balanced id"), ("tri_loss", "triplet"), ("total_loss", "total")):
        ax.plot(epochs, [float(r[key]) for r in rows], marker=".", label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax_lr.plot(epochs[1:], [float(r["lr"]) for r in rows[1:]], color="k")
    ax_lr.set_yscale("log")
    ax_lr.set_xlabel("epoch")
    ax_lr.set_ylabel("learning rate")
    return _save(fig, out)


def plot_cmc(rows, out) -> Path:
    """``rows`` carry ``rank`` and ``cmc``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot([int(r["rank"]) for r in rows], [float(r["cmc"]) for r in rows], marker=".")
    ax.set_xlabel("rank")
    ax.set_ylabel("CMC")
    ax.set_ylim(0, 1.02)
    return _save(fig, out)


def plot_bench(rows, out) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    grids = sorted({int(r["grid"]) for r in rows})
    for impl, style in (("sparse", "-"), ("dense", "--")):
        for grid in grids:
            sel = [r for r in rows if r["impl"] == impl and int(r["grid"]) == grid]
            ax.plot([int(r["depth"]) for r in sel], [float(r["ns_per_map"]) for r in sel], style, marker="o",
                    label=f"{impl} {grid}x{grid}")
    ax.set_yscale("log")
    ax.set_xlabel("cascade depth")
    ax.set_ylabel("ns per map")
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, out)


def plot_study(rows, out) -> Path:
    plt = _pyplot()
    names = [r["ablation"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 3.8))
    width = 0.27
    for k, key in enumerate(("map", "cmc1", "rare_cmc1")):
        ax.bar([i + (k - 1) * width for i in range(len(rows))], [float(r[key]) for r in rows], width, label=key)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.legend()
    return _save(fig, out)


FIGURES = {
    "train_log.csv": ("loss_curves.png", plot_training_log),
    "cmc.csv": ("cmc_curve.png", plot_cmc),
    "bench.csv": ("bench.png", plot_bench),
    "study.csv": ("study.png", plot_study),
}


def render_run(run_dir) -> list[Path]:
    """Render one figure per recognised CSV in ``run_dir``; returns the written paths."""
    run_dir = Path(run_dir)
    written = []
    for name, (fig_name, fn) in FIGURES.items():
        src = run_dir / name
        if src.exists():
            rows = read_csv(src)
            if rows:
                written.append(fn(rows, run_dir / fig_name))
    return written
