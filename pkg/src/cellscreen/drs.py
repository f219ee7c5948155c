"""Leave-one-out drug recommendation from per-drug best configurations.

For each eligible cell line and each drug tested on it, the drug's best
(algorithm, combo, hyperparameters) is retrained on every other cell line
tested with that drug — response = viability at the drug's calibrated
concentration, with the held-out cell excluded from calibration as well — and
the held-out cell's viability is predicted. Drugs are ranked ascending by
predicted viability and a prescription policy (top-N or epsilon) picks the
recommended subset. Tissue-type and seeded-random baselines are evaluated on
the same truth.
"""

from __future__ import annotations

import hashlib
import logging
import multiprocessing
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import (
    DesignMatrix,
    EncodingOptions,
    FeatureMatrix,
    FeatureType,
    GeneSet,
    TissueLabels,
    build_design_matrix,
    parse_combo_id,
)
from .dose import (
    CalibrationError,
    DEFAULT_TARGET_VIABILITY,
    DoseResponseTable,
    calibrate_concentration,
    normalize_viabilities,
    true_rank,
    viability_at,
)
from .learners import LearnerError, fit
from .mas import BestConfig

logger = logging.getLogger(__name__)

DEFAULT_MIN_DRUGS = 15
DEFAULT_MIN_TRAINING = 30
DEFAULT_EPSILON = 0.025


@dataclass(frozen=True)
class TopNPolicy:
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("N must be >= 1")

    def select(self, ranking: Sequence[tuple[str, float]]) -> tuple[str, ...]:
        return tuple(drug for drug, _ in ranking[: self.n])


@dataclass(frozen=True)
class EpsilonPolicy:
    epsilon: float

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    def select(self, ranking: Sequence[tuple[str, float]]) -> tuple[str, ...]:
        if not ranking:
            return ()
        cutoff = ranking[0][1] + self.epsilon
        return tuple(drug for drug, pred in ranking if pred <= cutoff)


Policy = TopNPolicy | EpsilonPolicy


def policy_top_n(ranking: Sequence[tuple[str, float]], n: int) -> tuple[str, ...]:
    return TopNPolicy(n).select(ranking)


def policy_epsilon(ranking: Sequence[tuple[str, float]], epsilon: float) -> tuple[str, ...]:
    return EpsilonPolicy(epsilon).select(ranking)


@dataclass(frozen=True)
class DrsConfig:
    mas_best: dict[str, BestConfig]
    policy: Policy = TopNPolicy(1)
    min_drugs_per_cell_line: int = DEFAULT_MIN_DRUGS
    min_training: int = DEFAULT_MIN_TRAINING
    encoding: EncodingOptions = EncodingOptions()
    target_viability: float = DEFAULT_TARGET_VIABILITY
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.mas_best:
            raise ValueError("mas_best must name at least one drug")
        if self.min_drugs_per_cell_line < 2:
            raise ValueError("min_drugs_per_cell_line must be >= 2")


@dataclass(frozen=True)
class DrsInputs:
    matrices: dict[FeatureType, FeatureMatrix]
    gene_sets: dict[str, GeneSet]
    dose_tables: dict[str, DoseResponseTable]
    tissue_labels: TissueLabels | None = None


@dataclass(frozen=True)
class Recommendation:
    cell_line: str
    ranking: tuple[tuple[str, float], ...]  # ascending predicted viability
    recommended: tuple[str, ...]
    skipped_drugs: tuple[str, ...]


@dataclass
class DrsRunResult:
    recommendations: dict[str, Recommendation]
    truth: dict[str, dict[str, float]]  # cell line -> drug -> viability at LOO level
    warnings: list[str]


def _derive_seed(base: int, label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[k : k + 4], "big") for k in range(0, 16, 4)]
    return int(np.random.SeedSequence([base, *words]).generate_state(1)[0])


@dataclass(frozen=True)
class _DrugTask:
    drug: str
    best: BestConfig
    tested: tuple[str, ...]
    held_out: tuple[str, ...]
    seed_base: int


_WORKER_CTX: dict | None = None


def _run_drug(
    task: _DrugTask, inputs: DrsInputs, config: DrsConfig
) -> tuple[dict[str, float], dict[str, float], list[str]]:
    """One drug's leave-one-out pass: per held-out cell, (prediction, truth)."""
    warnings: list[str] = []
    table = inputs.dose_tables[task.drug]
    combo = parse_combo_id(task.best.combo_id)
    design = build_design_matrix(
        combo,
        inputs.matrices,
        inputs.gene_sets,
        list(task.tested),
        config.encoding,
        observe_ids=task.tested,
    )
    predictions: dict[str, float] = {}
    truth: dict[str, float] = {}
    for cell in task.held_out:
        try:
            dose = calibrate_concentration(table, config.target_viability, exclude=(cell,))
        except CalibrationError as exc:
            warnings.append(f"drug {task.drug} cell {cell}: {exc}")
            continue
        true_v = viability_at(table, cell, dose.level)
        if true_v is None:
            warnings.append(
                f"drug {task.drug} cell {cell}: unmeasured at level {dose.level}, skipped"
            )
            continue
        train: list[str] = []
        y_train: list[float] = []
        for other in task.tested:
            if other == cell:
                continue
            v = viability_at(table, other, dose.level)
            if v is not None:
                train.append(other)
                y_train.append(v)
        if len(train) < config.min_training:
            warnings.append(
                f"drug {task.drug} cell {cell}: training set {len(train)} "
                f"< {config.min_training}, drug skipped"
            )
            continue
        try:
            model = fit(
                task.best.algorithm,
                design.rows(train),
                design.column_names,
                np.array(y_train),
                task.best.hyperparameters,
                seed=_derive_seed(task.seed_base, cell),
            )
            pred = float(model.predict(design.rows([cell]), design.column_names)[0])
        except LearnerError as exc:
            warnings.append(f"drug {task.drug} cell {cell}: fit failed ({exc})")
            continue
        predictions[cell] = pred
        truth[cell] = true_v
    return predictions, truth, warnings


def _run_drug_worker(idx: int):
    assert _WORKER_CTX is not None
    return _run_drug(_WORKER_CTX["tasks"][idx], _WORKER_CTX["inputs"], _WORKER_CTX["config"])


def recommend_loo(
    config: DrsConfig, inputs: DrsInputs, workers: int = 1
) -> DrsRunResult:
    """Leave-one-out recommendations for all eligible cell lines.

    Eligibility: tested on at least ``min_drugs_per_cell_line`` in-scope drugs.
    Scope: drugs present in both mas_best and the dose-response data.
    """
    warnings: list[str] = []
    shared_cells = set.intersection(
        *(set(m.cell_line_ids) for m in inputs.matrices.values())
    )
    drugs = sorted(set(config.mas_best) & set(inputs.dose_tables))
    for drug in sorted(set(config.mas_best) - set(inputs.dose_tables)):
        warnings.append(f"drug {drug}: no dose-response data, out of scope")
    if not drugs:
        raise ValueError("no drug has both a best configuration and dose-response data")

    tested_by_drug = {
        drug: tuple(
            sorted(set(inputs.dose_tables[drug].cell_line_ids) & shared_cells)
        )
        for drug in drugs
    }
    drug_count: dict[str, int] = {}
    for drug in drugs:
        for cell in tested_by_drug[drug]:
            drug_count[cell] = drug_count.get(cell, 0) + 1
    eligible = sorted(
        cell for cell, k in drug_count.items() if k >= config.min_drugs_per_cell_line
    )
    if not eligible:
        raise ValueError(
            f"no cell line tested on >= {config.min_drugs_per_cell_line} drugs"
        )

    tasks = [
        _DrugTask(
            drug=drug,
            best=config.mas_best[drug],
            tested=tested_by_drug[drug],
            held_out=tuple(c for c in tested_by_drug[drug] if c in set(eligible)),
            seed_base=_derive_seed(config.seed, f"drug:{drug}"),
        )
        for drug in drugs
    ]
    if workers <= 1 or len(tasks) <= 1:
        outcomes = [_run_drug(t, inputs, config) for t in tasks]
    else:
        global _WORKER_CTX
        _WORKER_CTX = {"tasks": tasks, "inputs": inputs, "config": config}
        try:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(processes=workers) as pool:
                outcomes = pool.map(_run_drug_worker, range(len(tasks)), chunksize=1)
        finally:
            _WORKER_CTX = None

    per_cell_pred: dict[str, dict[str, float]] = {c: {} for c in eligible}
    truth: dict[str, dict[str, float]] = {c: {} for c in eligible}
    skipped: dict[str, list[str]] = {c: [] for c in eligible}
    for task, (predictions, drug_truth, drug_warnings) in zip(tasks, outcomes):
        warnings.extend(drug_warnings)
        for cell in task.held_out:
            if cell in predictions:
                per_cell_pred[cell][task.drug] = predictions[cell]
                truth[cell][task.drug] = drug_truth[cell]
            else:
                skipped[cell].append(task.drug)

    recommendations: dict[str, Recommendation] = {}
    for cell in eligible:
        ranking = tuple(
            sorted(per_cell_pred[cell].items(), key=lambda kv: (kv[1], kv[0]))
        )
        if len(ranking) < 2:
            warnings.append(f"cell {cell}: fewer than 2 ranked drugs, dropped")
            truth.pop(cell, None)
            continue
        recommendations[cell] = Recommendation(
            cell_line=cell,
            ranking=ranking,
            recommended=config.policy.select(ranking),
            skipped_drugs=tuple(sorted(skipped[cell])),
        )
    return DrsRunResult(recommendations=recommendations, truth=truth, warnings=warnings)


def baseline_tissue_ranking(
    cell_line: str,
    tested_drugs: Sequence[str],
    truth: Mapping[str, Mapping[str, float]],
    tissue_labels: TissueLabels,
) -> tuple[tuple[tuple[str, float], ...], bool]:
    """Drugs ranked by mean true viability over same-tissue cell lines.

    The current cell line is excluded from the averages. When no same-tissue
    neighbour measured a drug (including singleton tissues), the global mean
    over all other cell lines fills in and the returned flag is set.
    """
    tissue = tissue_labels.tissue_of(cell_line)
    neighbours = [
        other
        for other in truth
        if other != cell_line and tissue_labels.tissue_of(other) == tissue
    ]
    fallback = False
    scores: list[tuple[str, float]] = []
    for drug in sorted(tested_drugs):
        values = [truth[o][drug] for o in neighbours if drug in truth[o]]
        if not values:
            fallback = True
            values = [
                truth[o][drug] for o in truth if o != cell_line and drug in truth[o]
            ]
        if not values:
            continue  # nobody else measured this drug; unrankable
        scores.append((drug, float(np.mean(values))))
    scores.sort(key=lambda kv: (kv[1], kv[0]))
    return tuple(scores), fallback


def baseline_tissue(
    cell_line: str,
    tested_drugs: Sequence[str],
    truth: Mapping[str, Mapping[str, float]],
    tissue_labels: TissueLabels,
) -> tuple[str, bool]:
    ranking, fallback = baseline_tissue_ranking(cell_line, tested_drugs, truth, tissue_labels)
    if not ranking:
        raise ValueError(f"cell {cell_line}: no drug rankable by the tissue baseline")
    return ranking[0][0], fallback


def baseline_random_ranking(
    cell_line: str, tested_drugs: Sequence[str], seed: int
) -> tuple[str, ...]:
    """Seeded uniform permutation of the tested drugs; stable per (seed, cell)."""
    rng = np.random.default_rng(_derive_seed(seed, f"random:{cell_line}"))
    drugs = sorted(tested_drugs)
    return tuple(drugs[int(i)] for i in rng.permutation(len(drugs)))


def baseline_random(cell_line: str, tested_drugs: Sequence[str], seed: int) -> str:
    if not tested_drugs:
        raise ValueError("need at least one tested drug")
    return baseline_random_ranking(cell_line, tested_drugs, seed)[0]


@dataclass
class MethodMetrics:
    top1_accuracy: float
    mean_true_rank: float
    rank_histogram: dict[int, int]
    rank_cdf: list[tuple[int, float]]
    inclusion_curve: list[float]  # index k holds N = k + 1
    gap_by_n: list[float]
    gaps_at_1: dict[str, float]  # per cell line, N = 1
    epsilon_star: dict[str, float]  # per cell line, for the recommended set
    fallback_cells: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "top1_accuracy": self.top1_accuracy,
            "mean_true_rank": self.mean_true_rank,
            "rank_histogram": {str(k): v for k, v in sorted(self.rank_histogram.items())},
            "rank_cdf": [[k, f] for k, f in self.rank_cdf],
            "inclusion_curve": self.inclusion_curve,
            "gap_by_n": self.gap_by_n,
            "gaps_at_1": dict(sorted(self.gaps_at_1.items())),
            "epsilon_star": dict(sorted(self.epsilon_star.items())),
            "fallback_cells": self.fallback_cells,
        }


@dataclass
class DrsEvaluation:
    methods: dict[str, MethodMetrics]  # drs | tissue | random
    policy: Policy
    n_cell_lines: int

    def to_dict(self) -> dict:
        policy = (
            {"kind": "top_n", "n": self.policy.n}
            if isinstance(self.policy, TopNPolicy)
            else {"kind": "epsilon", "epsilon": self.policy.epsilon}
        )
        return {
            "policy": policy,
            "n_cell_lines": self.n_cell_lines,
            "methods": {name: m.to_dict() for name, m in self.methods.items()},
        }


def epsilon_star(
    recommended: Sequence[str], normalized_truth: Mapping[str, float]
) -> float:
    """Worst realized gap: max over recommended drugs of (truth - best truth)."""
    if not recommended:
        raise ValueError("recommended set is empty")
    best = min(normalized_truth.values())
    return max(normalized_truth[d] - best for d in recommended)


def _method_metrics(
    rankings: Mapping[str, Sequence[tuple[str, float]]],
    truth: Mapping[str, Mapping[str, float]],
    policy: Policy,
    scores_meaningful: bool,
    fallback_cells: Sequence[str] = (),
) -> MethodMetrics:
    """Shared metric computation over per-cell rankings.

    ``scores_meaningful`` guards the epsilon policy: rankings without
    comparable scores (the random baseline) degrade to the single top drug.
    """
    cells = sorted(rankings)
    norm = {cell: normalize_viabilities(truth[cell]) for cell in cells}
    max_tested = max(len(rankings[c]) for c in cells)

    top1 = 0
    ranks: list[int] = []
    histogram: dict[int, int] = {}
    gaps_at_1: dict[str, float] = {}
    eps_star: dict[str, float] = {}
    inclusion = np.zeros(max_tested)
    gap_by_n = np.zeros(max_tested)
    for cell in cells:
        ranking = list(rankings[cell])
        nv = norm[cell]
        top_drug = ranking[0][0]
        r = true_rank(nv, top_drug)
        ranks.append(r)
        histogram[r] = histogram.get(r, 0) + 1
        if r == 1:
            top1 += 1
        true_sorted = sorted(nv.values())
        best_value = true_sorted[0]
        gaps_at_1[cell] = nv[top_drug] - best_value
        if isinstance(policy, EpsilonPolicy) and scores_meaningful:
            recommended = policy.select(ranking)
        elif isinstance(policy, EpsilonPolicy):
            recommended = (top_drug,)
        else:
            recommended = policy.select(ranking)
        eps_star[cell] = epsilon_star(recommended, nv)
        best_drugs = {d for d, v in nv.items() if v == best_value}
        for k in range(max_tested):
            top = [d for d, _ in ranking[: k + 1]]
            if k + 1 > len(ranking):
                top = [d for d, _ in ranking]
            if best_drugs & set(top):
                inclusion[k] += 1
            n_eff = min(k + 1, len(ranking))
            gap_by_n[k] += float(
                np.mean([nv[d] for d, _ in ranking[:n_eff]])
                - np.mean(true_sorted[:n_eff])
            )
    n = len(cells)
    max_rank = max(ranks)
    cdf = []
    cum = 0
    for r in range(1, max_rank + 1):
        cum += histogram.get(r, 0)
        cdf.append((r, cum / n))
    return MethodMetrics(
        top1_accuracy=top1 / n,
        mean_true_rank=float(np.mean(ranks)),
        rank_histogram=histogram,
        rank_cdf=cdf,
        inclusion_curve=[float(v / n) for v in inclusion],
        gap_by_n=[float(v / n) for v in gap_by_n],
        gaps_at_1=gaps_at_1,
        epsilon_star=eps_star,
        fallback_cells=sorted(fallback_cells),
    )


def evaluate(
    result: DrsRunResult,
    config: DrsConfig,
    tissue_labels: TissueLabels | None = None,
) -> DrsEvaluation:
    """Full evaluation of Dr.S against the tissue-type and random baselines.

    All metrics use per-cell-line normalized viabilities (0 = that cell's best
    drug, 1 = its worst), so gaps and epsilon-star values are comparable
    across cell lines.
    """
    cells = sorted(result.recommendations)
    if not cells:
        raise ValueError("no recommendations to evaluate")
    truth = result.truth
    drs_rankings = {c: result.recommendations[c].ranking for c in cells}
    methods = {
        "drs": _method_metrics(drs_rankings, truth, config.policy, scores_meaningful=True)
    }
    if tissue_labels is not None:
        tissue_rankings = {}
        fallback_cells = []
        for cell in cells:
            ranking, fallback = baseline_tissue_ranking(
                cell, list(truth[cell]), truth, tissue_labels
            )
            tissue_rankings[cell] = ranking
            if fallback:
                fallback_cells.append(cell)
        methods["tissue"] = _method_metrics(
            tissue_rankings, truth, config.policy,
            scores_meaningful=True, fallback_cells=fallback_cells,
        )
    random_rankings = {
        c: [(d, float(i)) for i, d in enumerate(baseline_random_ranking(c, list(truth[c]), config.seed))]
        for c in cells
    }
    methods["random"] = _method_metrics(
        random_rankings, truth, config.policy, scores_meaningful=False
    )
    return DrsEvaluation(methods=methods, policy=config.policy, n_cell_lines=len(cells))
