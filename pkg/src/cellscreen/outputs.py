"""Readers and writers for the run output files.

All floats are written with ``repr`` so equal values round-trip byte-exactly,
and all row orders are fully determined by the data (never by dict or set
iteration order).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping

from .data import DataFormatError
from .drs import DrsEvaluation, DrsRunResult
from .dose import true_rank
from .mas import BestConfig, GeneSetComparison, MasRunResult


def save_mas_results(result: MasRunResult, path: str | Path) -> None:
    """Per-loop holdout R^2 for every (drug, algorithm, combo)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["drug", "algorithm", "combo", "loop", "r2", "hyperparameters"])
        for drug in sorted(result.per_drug):
            res = result.per_drug[drug]
            combo_rank = {c: i for i, c in enumerate(res.combo_order)}
            for (alg, combo_id), ev in sorted(
                res.evaluations.items(), key=lambda kv: (kv[0][0], combo_rank[kv[0][1]])
            ):
                ok_loops = [i for i in range(len(ev.loop_r2) + len(ev.failed_loops))
                            if i not in set(ev.failed_loops)]
                for loop, r2_value, params in zip(ok_loops, ev.loop_r2, ev.chosen_params):
                    writer.writerow(
                        [drug, alg, combo_id, loop, repr(r2_value),
                         json.dumps(params, sort_keys=True)]
                    )


def load_mas_results(path: str | Path) -> list[dict]:
    path = Path(path)
    expected = ["drug", "algorithm", "combo", "loop", "r2", "hyperparameters"]
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise DataFormatError(f"{path}: expected header {','.join(expected)}")
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise DataFormatError(f"{path}: malformed row {row_num}")
            rows.append(
                {
                    "drug": row[0],
                    "algorithm": row[1],
                    "combo": row[2],
                    "loop": int(row[3]),
                    "r2": float(row[4]),
                    "hyperparameters": json.loads(row[5]),
                }
            )
    return rows


def save_mas_best(best: Mapping[str, BestConfig], path: str | Path) -> None:
    payload = {drug: best[drug].to_dict() for drug in sorted(best)}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_mas_best(path: str | Path) -> dict[str, BestConfig]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    out = {}
    for drug, entry in payload.items():
        try:
            out[drug] = BestConfig(
                algorithm=entry["algorithm"],
                combo_id=entry["combo"],
                hyperparameters=entry["hyperparameters"],
                mean_r2=float(entry["mean_r2"]),
            )
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"{path}: malformed entry for drug {drug!r}") from exc
    return out


def save_gene_set_comparisons(
    comparisons: Mapping[str, Mapping[str, GeneSetComparison]], path: str | Path
) -> None:
    """Rows: drug x gene set with with/without mean R^2, p-value, usage count."""
    import numpy as np

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["drug", "gene_set", "mean_r2_with", "mean_r2_without", "p_value", "usage_count"]
        )
        for drug in sorted(comparisons):
            for set_name in sorted(comparisons[drug]):
                c = comparisons[drug][set_name]
                writer.writerow(
                    [
                        drug,
                        set_name,
                        repr(float(np.mean(c.with_values))),
                        repr(float(np.mean(c.without_values))),
                        repr(c.p_value),
                        c.usage_count,
                    ]
                )


def load_gene_set_comparisons(path: str | Path) -> list[dict]:
    path = Path(path)
    expected = ["drug", "gene_set", "mean_r2_with", "mean_r2_without", "p_value", "usage_count"]
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise DataFormatError(f"{path}: expected header {','.join(expected)}")
        for row in reader:
            rows.append(
                {
                    "drug": row[0],
                    "gene_set": row[1],
                    "mean_r2_with": float(row[2]),
                    "mean_r2_without": float(row[3]),
                    "p_value": float(row[4]),
                    "usage_count": int(row[5]),
                }
            )
    return rows


def save_feature_importances(
    importances: Mapping[str, Mapping[str, float]], path: str | Path
) -> None:
    """Rows: drug x feature, importance descending then feature name."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["drug", "feature", "importance"])
        for drug in sorted(importances):
            entries = sorted(importances[drug].items(), key=lambda kv: (-kv[1], kv[0]))
            for feature, weight in entries:
                writer.writerow([drug, feature, repr(float(weight))])


def load_feature_importances(path: str | Path) -> dict[str, dict[str, float]]:
    path = Path(path)
    out: dict[str, dict[str, float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["drug", "feature", "importance"]:
            raise DataFormatError(f"{path}: expected header 'drug,feature,importance'")
        for row in reader:
            out.setdefault(row[0], {})[row[1]] = float(row[2])
    return out


def save_drs_recommendations(result: DrsRunResult, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["cell_line", "rank", "drug", "predicted_viability", "true_viability", "true_rank"]
        )
        for cell in sorted(result.recommendations):
            rec = result.recommendations[cell]
            truth = result.truth[cell]
            for rank, (drug, pred) in enumerate(rec.ranking, start=1):
                writer.writerow(
                    [cell, rank, drug, repr(pred), repr(truth[drug]), true_rank(truth, drug)]
                )


def load_drs_recommendations(path: str | Path) -> list[dict]:
    path = Path(path)
    expected = ["cell_line", "rank", "drug", "predicted_viability", "true_viability", "true_rank"]
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise DataFormatError(f"{path}: expected header {','.join(expected)}")
        for row in reader:
            rows.append(
                {
                    "cell_line": row[0],
                    "rank": int(row[1]),
                    "drug": row[2],
                    "predicted_viability": float(row[3]),
                    "true_viability": float(row[4]),
                    "true_rank": int(row[5]),
                }
            )
    return rows


def save_drs_eval(evaluation: DrsEvaluation, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(evaluation.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )


def load_drs_eval(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
