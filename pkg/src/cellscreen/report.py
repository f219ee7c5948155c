"""Report rendering: machine-readable plot data plus matplotlib figures.

Reads whatever run outputs exist in a results directory and emits, for each
chart, a delimited plot-data file and a PNG rendering. Every output is
deterministic for identical inputs (floats via ``repr``, PNG metadata
stripped), so reports participate in byte-identity checks.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import outputs

logger = logging.getLogger(__name__)

GAP_BIN_WIDTH = 0.05
TOP_FEATURES = 20

_PNG_KW = {"dpi": 100, "metadata": {"Software": None}}


def render_report(results_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Render all charts whose inputs exist; error when none do."""
    results_dir = Path(results_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    mas_best_path = results_dir / "mas_best.json"
    if mas_best_path.exists():
        written += _render_r2_summary(outputs.load_mas_best(mas_best_path), out_dir)
    comparison_path = results_dir / "gene_set_comparison.csv"
    if comparison_path.exists():
        written += _render_gene_set_usage(
            outputs.load_gene_set_comparisons(comparison_path), out_dir
        )
    importance_path = results_dir / "feature_importances.csv"
    if importance_path.exists():
        written += _render_importances(
            outputs.load_feature_importances(importance_path), out_dir
        )
    eval_path = results_dir / "drs_eval.json"
    if eval_path.exists():
        written += _render_drs_eval(outputs.load_drs_eval(eval_path), out_dir)

    if not written:
        raise FileNotFoundError(
            f"{results_dir}: no run outputs found "
            "(mas_best.json, gene_set_comparison.csv, feature_importances.csv, drs_eval.json)"
        )
    return written


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _fmt(x: float) -> str:
    return repr(float(x))


def _render_r2_summary(best: Mapping, out_dir: Path) -> list[Path]:
    entries = sorted(
        ((cfg.mean_r2, drug) for drug, cfg in best.items()), key=lambda t: (t[0], t[1])
    )
    rows = [[drug, _fmt(r2)] for r2, drug in entries]
    csv_path = _write_csv(out_dir / "drug_r2_summary.csv", ["drug", "mean_r2"], rows)

    fig, ax = plt.subplots(figsize=(max(4, 0.4 * len(entries) + 2), 4))
    ax.bar(range(len(entries)), [r2 for r2, _ in entries], color="#4878d0")
    ax.set_xticks(range(len(entries)))
    ax.set_xticklabels([drug for _, drug in entries], rotation=90, fontsize=7)
    ax.set_ylabel("best mean holdout $R^2$")
    ax.set_title("Per-drug best model performance (sorted ascending)")
    fig.tight_layout()
    png_path = out_dir / "drug_r2_summary.png"
    fig.savefig(png_path, **_PNG_KW)
    plt.close(fig)
    return [csv_path, png_path]


def _render_gene_set_usage(comparisons: Sequence[dict], out_dir: Path) -> list[Path]:
    usage: dict[str, int] = {}
    for row in comparisons:
        usage[row["gene_set"]] = usage.get(row["gene_set"], 0) + row["usage_count"]
    entries = sorted(usage.items(), key=lambda kv: (-kv[1], kv[0]))
    csv_path = _write_csv(
        out_dir / "gene_set_usage.csv", ["gene_set", "count"], entries
    )
    written = [csv_path]
    total = sum(c for _, c in entries)
    if total > 0:
        used = [(name, c) for name, c in entries if c > 0]
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.pie(
            [c for _, c in used],
            labels=[name for name, _ in used],
            autopct="%1.0f%%",
            textprops={"fontsize": 8},
        )
        ax.set_title("Gene-set usage in top-5 combos per algorithm")
        fig.tight_layout()
        png_path = out_dir / "gene_set_usage.png"
        fig.savefig(png_path, **_PNG_KW)
        plt.close(fig)
        written.append(png_path)
    else:
        logger.warning("gene-set usage all zero; pie chart skipped")
    return written


def _render_importances(
    importances: Mapping[str, Mapping[str, float]], out_dir: Path
) -> list[Path]:
    pooled: dict[str, float] = {}
    for per_drug in importances.values():
        for feature, w in per_drug.items():
            pooled[feature] = pooled.get(feature, 0.0) + w / len(importances)
    top = sorted(pooled.items(), key=lambda kv: (-kv[1], kv[0]))[:TOP_FEATURES]
    csv_path = _write_csv(
        out_dir / "importance_summary.csv",
        ["feature", "mean_importance"],
        [[f, _fmt(w)] for f, w in top],
    )
    fig, ax = plt.subplots(figsize=(6, max(3, 0.3 * len(top))))
    ax.barh(range(len(top) - 1, -1, -1), [w for _, w in top], color="#6acc64")
    ax.set_yticks(range(len(top) - 1, -1, -1))
    ax.set_yticklabels([f for f, _ in top], fontsize=7)
    ax.set_xlabel("mean normalized importance across drugs")
    ax.set_title(f"Top {len(top)} features")
    fig.tight_layout()
    png_path = out_dir / "importance_summary.png"
    fig.savefig(png_path, **_PNG_KW)
    plt.close(fig)
    return [csv_path, png_path]


_METHOD_STYLE = {"drs": "#d65f5f", "tissue": "#4878d0", "random": "#797979"}


def _render_drs_eval(evaluation: dict, out_dir: Path) -> list[Path]:
    methods = evaluation["methods"]
    names = [m for m in ("drs", "tissue", "random") if m in methods]
    written: list[Path] = []

    rows = []
    for m in names:
        for rank, frac in methods[m]["rank_cdf"]:
            rows.append([m, rank, _fmt(frac)])
    written.append(_write_csv(out_dir / "rank_cdf.csv", ["method", "rank", "fraction"], rows))
    fig, ax = plt.subplots(figsize=(5, 4))
    for m in names:
        xs = [r for r, _ in methods[m]["rank_cdf"]]
        ys = [f for _, f in methods[m]["rank_cdf"]]
        ax.step(xs, ys, where="post", label=m, color=_METHOD_STYLE[m])
    ax.set_xlabel("true rank of top recommendation")
    ax.set_ylabel("cumulative fraction of cell lines")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.set_title("True-rank CDF")
    fig.tight_layout()
    png = out_dir / "rank_cdf.png"
    fig.savefig(png, **_PNG_KW)
    plt.close(fig)
    written.append(png)

    rows = []
    for m in names:
        for i, frac in enumerate(methods[m]["inclusion_curve"], start=1):
            rows.append([m, i, _fmt(frac)])
    written.append(_write_csv(out_dir / "inclusion_curve.csv", ["method", "n", "fraction"], rows))
    fig, ax = plt.subplots(figsize=(5, 4))
    for m in names:
        curve = methods[m]["inclusion_curve"]
        ax.plot(range(1, len(curve) + 1), curve, label=m, color=_METHOD_STYLE[m])
    ax.set_xlabel("N")
    ax.set_ylabel("fraction with true best drug in top N")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.set_title("Best-drug inclusion curve")
    fig.tight_layout()
    png = out_dir / "inclusion_curve.png"
    fig.savefig(png, **_PNG_KW)
    plt.close(fig)
    written.append(png)

    rows = []
    for m in names:
        for i, gap in enumerate(methods[m]["gap_by_n"], start=1):
            rows.append([m, i, _fmt(gap)])
    written.append(_write_csv(out_dir / "gap_by_n.csv", ["method", "n", "mean_gap"], rows))
    fig, ax = plt.subplots(figsize=(5, 4))
    for m in names:
        curve = methods[m]["gap_by_n"]
        ax.plot(range(1, len(curve) + 1), curve, label=m, color=_METHOD_STYLE[m])
    ax.set_xlabel("N")
    ax.set_ylabel("mean viability gap (normalized)")
    ax.legend()
    ax.set_title("Prescribed-vs-best viability gap by N")
    fig.tight_layout()
    png = out_dir / "gap_by_n.png"
    fig.savefig(png, **_PNG_KW)
    plt.close(fig)
    written.append(png)

    edges = np.arange(0.0, 1.0 + GAP_BIN_WIDTH, GAP_BIN_WIDTH)
    rows = []
    hist_by_method = {}
    for m in names:
        gaps = list(methods[m]["gaps_at_1"].values())
        counts, _ = np.histogram(gaps, bins=edges)
        hist_by_method[m] = counts
        for left, right, count in zip(edges[:-1], edges[1:], counts):
            rows.append([m, _fmt(left), _fmt(right), int(count)])
    written.append(
        _write_csv(out_dir / "gap_histogram.csv", ["method", "bin_left", "bin_right", "count"], rows)
    )
    fig, ax = plt.subplots(figsize=(5, 4))
    width = GAP_BIN_WIDTH / (len(names) + 1)
    for k, m in enumerate(names):
        ax.bar(
            edges[:-1] + k * width, hist_by_method[m], width=width,
            label=m, color=_METHOD_STYLE[m], align="edge",
        )
    ax.set_xlabel("viability gap to true best (N = 1, normalized)")
    ax.set_ylabel("cell lines")
    ax.legend()
    ax.set_title("Gap histogram at N = 1")
    fig.tight_layout()
    png = out_dir / "gap_histogram.png"
    fig.savefig(png, **_PNG_KW)
    plt.close(fig)
    written.append(png)

    rows = []
    cdfs = {}
    for m in names:
        values = sorted(methods[m]["epsilon_star"].values())
        n = len(values)
        cdf = [(v, (i + 1) / n) for i, v in enumerate(values)]
        cdfs[m] = cdf
        for v, frac in cdf:
            rows.append([m, _fmt(v), _fmt(frac)])
    written.append(
        _write_csv(out_dir / "epsilon_star_cdf.csv", ["method", "epsilon_star", "fraction"], rows)
    )
    fig, ax = plt.subplots(figsize=(5, 4))
    for m in names:
        xs = [v for v, _ in cdfs[m]]
        ys = [f for _, f in cdfs[m]]
        ax.step(xs, ys, where="post", label=m, color=_METHOD_STYLE[m])
    ax.set_xlabel(r"realized worst-case gap $\varepsilon^*$")
    ax.set_ylabel("cumulative fraction of cell lines")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.set_title(r"$\varepsilon^*$ distribution")
    fig.tight_layout()
    png = out_dir / "epsilon_star_cdf.png"
    fig.savefig(png, **_PNG_KW)
    plt.close(fig)
    written.append(png)
    return written
