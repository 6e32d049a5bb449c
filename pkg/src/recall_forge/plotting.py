"""Report figures, rendered with the Agg backend into ``<output>/figures``."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}


def _save(fig, path):
    # metadata=None on Software keeps the PNG bytes stable across runs
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def map_bar_chart(reports: dict, path: str, k: int | None = None) -> None:
    names = list(reports)
    values = [reports[n].map_at_k for n in names]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        bars = ax.bar(range(len(names)), values, color="0.55")
        bars[-1].set_color("C0")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels([n.replace("_", "\n") for n in names])
        ax.set_ylabel(f"MAP@{k}" if k else "MAP")
        for x, v in enumerate(values):
            ax.text(x, v, f"{v:.4f}", ha="center", va="bottom", fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def rank_fix_histogram(corrections_tsv: str, path: str) -> None:
    with open(corrections_tsv, encoding="utf-8") as fh:
        values = [float(row["rank_fix"]) for row in csv.DictReader(fh, delimiter="\t")]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        if values:
            ax.hist(values, bins=40, color="C0")
        ax.axvline(0.0, color="k", lw=0.8)
        ax.set_xlabel("rank correction")
        ax.set_ylabel("recall entries")
        fig.tight_layout()
        _save(fig, path)


def _first_hit(ranking, relevant):
    for i, c in enumerate(ranking, 1):
        if c in relevant:
            return i
    return None


def rank_shift_plot(before, after, truth, path: str) -> None:
    """Rank of each truth item's partner before vs after correction."""
    relevant: dict[int, set[int]] = {}
    for a, b in truth:
        relevant.setdefault(a, set()).add(b)
        relevant.setdefault(b, set()).add(a)
    xs, ys = [], []
    for q in sorted(relevant):
        r0 = _first_hit(before.candidates(q), relevant[q])
        r1 = _first_hit(after.candidates(q), relevant[q])
        if r0 is not None and r1 is not None:
            xs.append(r0)
            ys.append(r1)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.scatter(xs, ys, s=12, alpha=0.6)
        top = max(xs + ys + [2])
        ax.plot([1, top], [1, top], color="0.6", lw=0.8, ls="--")
        ax.set_xlabel("rank in fused list")
        ax.set_ylabel("rank after correction")
        fig.tight_layout()
        _save(fig, path)


def render_report_figures(out_dir: str, reports: dict, corrections_tsv: str, fused, corrected,
                          truth, k: int | None = None) -> list[str]:
    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    paths = [os.path.join(fig_dir, n) for n in ("map_by_method.png", "rank_fix_hist.png", "rank_shift.png")]
    map_bar_chart(reports, paths[0], k)
    rank_fix_histogram(corrections_tsv, paths[1])
    rank_shift_plot(fused, corrected, truth, paths[2])
    return paths
