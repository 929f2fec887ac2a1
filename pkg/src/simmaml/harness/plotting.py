"""Report figures. Rendered off-screen; PNG metadata is pinned so reruns are byte-identical."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}
PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_META)
    plt.close(fig)


def _smooth(values: Sequence[float], width: int) -> list[float]:
    out, acc = [], 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= width:
            acc -= values[i - width]
        out.append(acc / min(i + 1, width))
    return out


def plot_learning_curves(curves: Mapping[int, Sequence[tuple]], path: str | Path) -> None:
    """Meta-train (solid) and meta-test (dashed) loss against step, one colour per seed."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for n, (seed, curve) in enumerate(sorted(curves.items())):
            steps = [c[0] for c in curve]
            width = max(1, len(curve) // 40)
            color = f"C{n % 10}"
            ax.plot(steps, _smooth([c[1] for c in curve], width), color=color, lw=1.0,
                    label=f"seed {seed}")
            if curve and curve[0][2] is not None:
                ax.plot(steps, _smooth([c[2] for c in curve], width), color=color, lw=1.0, ls="--")
        ax.set_xlabel("step")
        ax.set_ylabel("loss per sequence")
        ax.set_yscale("log")
        ax.legend(frameon=False, ncol=2)
        _save(fig, path)


def plot_seed_accuracy(report: dict, path: str | Path) -> None:
    """Per-seed exact-match accuracy for every evaluated split, with the across-seed mean."""
    splits = list(report["aggregate"])
    seeds = [e["seed"] for e in report["per_seed"]]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.0, 1.1 * len(splits) + 1.5), 3.0))
        width = 0.8 / max(1, len(seeds))
        for j, e in enumerate(report["per_seed"]):
            xs = [i - 0.4 + width * (j + 0.5) for i in range(len(splits))]
            ax.bar(xs, [e["splits"][s]["accuracy"] for s in splits], width=width,
                   color=f"C{j % 10}", label=f"seed {e['seed']}")
        ax.scatter(range(len(splits)), [report["aggregate"][s]["mean"] for s in splits],
                   color="k", marker="_", s=400, zorder=3, label="mean")
        ax.set_xticks(range(len(splits)))
        ax.set_xticklabels(splits)
        ax.set_ylim(0, 1)
        ax.set_ylabel("exact match")
        ax.set_title(f"{report['mode']} ({report['kernel']})" if report["mode"] == "maml"
                     else report["mode"])
        if len(seeds) <= 10:
            ax.legend(frameon=False, fontsize=7, ncol=2)
        _save(fig, path)


def plot_paired(paired: dict, path: str | Path, label: str = "MAML") -> None:
    """Baseline vs. method accuracy per seed, joined by a line per seed."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        for s, b, o in zip(paired["seeds"], paired["baseline"], paired["other"]):
            ax.plot([0, 1], [b, o], color="0.6", lw=0.8, marker="o", ms=3)
        ax.plot([0, 1], [paired["baseline_mean"], paired["other_mean"]], color="C3", lw=2,
                marker="s", ms=5, label="mean")
        ax.set_xticks([0, 1])
        ax.set_xticklabels(["supervised", label])
        ax.set_xlim(-0.3, 1.3)
        ax.set_ylabel(f"{paired['split']} exact match")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_analysis(rows: Sequence[dict], path: str | Path) -> None:
    """Neighbour length and atom counts against k, one line per kernel."""
    kernels = sorted({r["kernel"] for r in rows})
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(6.0, 2.8))
        for n, kern in enumerate(kernels):
            sel = sorted((r for r in rows if r["kernel"] == kern), key=lambda r: r["k"])
            ks = [r["k"] for r in sel]
            ax1.errorbar(ks, [r["length_mean"] for r in sel], yerr=[r["length_std"] for r in sel],
                         color=f"C{n}", marker="o", ms=3, capsize=2, label=kern)
            ax2.plot(ks, [r["atoms_mean"] for r in sel], color=f"C{n}", marker="o", ms=3)
        for ax in (ax1, ax2):
            ax.set_xscale("log")
            ax.set_xlabel("top k")
        ax1.set_ylabel("neighbour length (chars)")
        ax2.set_ylabel("atoms per anchor")
        ax1.legend(frameon=False)
        _save(fig, path)
