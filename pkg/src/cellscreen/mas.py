"""Per-drug model selection: algorithms x combos under the double-split harness.

For every drug, each (algorithm, combo) pair is tuned and evaluated with
repeated holdouts; the best configuration is handed to the recommendation
stage. Univariate selection re-runs per outer loop on training rows only, and
random gene sets provide the prior-knowledge baseline comparison.
"""

from __future__ import annotations

import json
import logging
import multiprocessing
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import (
    Combo,
    DesignMatrix,
    EncodingOptions,
    FEATURE_TYPE_ORDER,
    FeatureMatrix,
    FeatureType,
    GeneSet,
    TissueLabels,
    build_design_matrix,
    enumerate_combos,
    parse_combo_id,
)
from .learners import ALGORITHM_ORDER, HyperparameterGrid, default_grid
from .splits import EvaluationResult, SplitPlan, tune_and_evaluate
from .stats import ranksum_test, spearman

logger = logging.getLogger(__name__)

UNIVARIATE_NAME = "univariate"
DEFAULT_UNIVARIATE_K = 263
DEFAULT_MIN_CELL_LINES = 30
TOP_COMBOS_PER_ALGORITHM = 5
DEFAULT_TOP_K_IMPORTANCE = 10
SIGNIFICANCE_LEVEL = 0.05


@dataclass(frozen=True)
class MasRunConfig:
    algorithms: tuple[str, ...]
    plan: SplitPlan
    grids: dict[str, HyperparameterGrid] = field(default_factory=dict)
    encoding: EncodingOptions = EncodingOptions()
    response_kind: str = "auc"  # auc | viability | custom
    feature_types: tuple[FeatureType, ...] = FEATURE_TYPE_ORDER
    drugs: tuple[str, ...] | None = None
    min_cell_lines: int = DEFAULT_MIN_CELL_LINES
    univariate: bool = False
    univariate_k: int = DEFAULT_UNIVARIATE_K
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.algorithms:
            raise ValueError("at least one algorithm required")
        for alg in self.algorithms:
            if alg not in ALGORITHM_ORDER:
                raise ValueError(f"unknown algorithm {alg!r}")
        grids = dict(self.grids)
        for alg in self.algorithms:
            grids.setdefault(alg, default_grid(alg))
        object.__setattr__(self, "grids", grids)


@dataclass(frozen=True)
class MasInputs:
    matrices: dict[FeatureType, FeatureMatrix]
    gene_sets: dict[str, GeneSet]
    responses: dict[str, dict[str, float]]  # drug -> cell line -> response
    tissue_labels: TissueLabels | None = None


@dataclass(frozen=True)
class BestConfig:
    algorithm: str
    combo_id: str
    hyperparameters: dict
    mean_r2: float

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "combo": self.combo_id,
            "hyperparameters": self.hyperparameters,
            "mean_r2": self.mean_r2,
        }


@dataclass
class MasDrugResult:
    drug: str
    cell_lines: tuple[str, ...]
    combo_order: list[str]
    evaluations: dict[tuple[str, str], EvaluationResult]
    best: BestConfig | None


@dataclass
class MasRunResult:
    per_drug: dict[str, MasDrugResult]
    warnings: list[str]

    @property
    def valid(self) -> bool:
        return all(
            ev.valid
            for res in self.per_drug.values()
            for ev in res.evaluations.values()
        )


@dataclass(frozen=True)
class GeneSetComparison:
    set_name: str
    with_values: tuple[float, ...]
    without_values: tuple[float, ...]
    p_value: float
    usage_count: int


def univariate_select(
    feature_type: FeatureType,
    train_values: np.ndarray,
    gene_ids: Sequence[str],
    train_y: np.ndarray,
    k: int = DEFAULT_UNIVARIATE_K,
) -> list[str]:
    """Top-k genes by univariate association with the training response.

    Expression/copy number rank by |Spearman rho|; mutation collapses codes to
    mutated-vs-not and ranks by two-sided rank-sum p-value. Constant genes get
    rho = 0 / p = 1. Ties break by gene id. Uses training rows only.
    """
    train_values = np.asarray(train_values, dtype=float)
    if k > len(gene_ids):
        raise ValueError(f"k={k} exceeds gene count {len(gene_ids)}")
    train_y = np.asarray(train_y, dtype=float)
    scored: list[tuple[float, str]] = []
    if feature_type is FeatureType.MUTATION:
        mutated = train_values != 0
        for j, gene in enumerate(gene_ids):
            mask = mutated[:, j]
            if mask.all() or not mask.any():
                p = 1.0
            else:
                p = ranksum_test(train_y[mask], train_y[~mask])
            scored.append((p, gene))
    else:
        for j, gene in enumerate(gene_ids):
            col = train_values[:, j]
            rho = 0.0 if np.all(col == col[0]) else spearman(col, train_y)
            scored.append((-abs(rho), gene))
    scored.sort()
    return [gene for _, gene in scored[:k]]


def generate_random_gene_sets(
    universe: Sequence[str],
    sizes: Sequence[int],
    count_per_size: int,
    seed: int,
) -> list[GeneSet]:
    """Uniform sampling without replacement; names encode size and replicate."""
    universe = sorted(set(universe))
    rng = np.random.default_rng(seed)
    sets = []
    for size in sizes:
        if size > len(universe):
            raise ValueError(f"requested size {size} exceeds universe {len(universe)}")
        for rep in range(count_per_size):
            chosen = rng.choice(len(universe), size=size, replace=False)
            sets.append(
                GeneSet(
                    name=f"random{size}_{rep}",
                    genes=frozenset(universe[int(i)] for i in chosen),
                )
            )
    return sets


def _is_univariate(combo_id: str) -> bool:
    return any(part.endswith(f":{UNIVARIATE_NAME}") for part in combo_id.split("|"))


def _univariate_combos(feature_types: Sequence[FeatureType]) -> list[Combo]:
    dummy = GeneSet(name=UNIVARIATE_NAME, genes=frozenset(["_"]))
    return enumerate_combos([dummy], feature_types)


class _ComboBuilder:
    """Design builder for a fixed combo; categorical levels observed on train ids."""

    def __init__(self, combo, matrices, gene_sets, cell_lines, options):
        self.combo = combo
        self.matrices = matrices
        self.gene_sets = gene_sets
        self.cell_lines = cell_lines
        self.options = options

    def __call__(self, train_ids: Sequence[str]) -> DesignMatrix:
        return build_design_matrix(
            self.combo,
            self.matrices,
            self.gene_sets,
            self.cell_lines,
            self.options,
            observe_ids=train_ids,
        )


class _UnivariateBuilder:
    """Per-loop univariate selection on training rows, then a fresh design."""

    def __init__(self, combo, matrices, y, k, cell_lines, options):
        self.combo = combo  # slots assigned UNIVARIATE_NAME or None
        self.matrices = matrices
        self.y = y
        self.k = k
        self.cell_lines = cell_lines
        self.options = options

    def __call__(self, train_ids: Sequence[str]) -> DesignMatrix:
        train_ids = list(train_ids)
        y_train = np.array([self.y[i] for i in train_ids])
        selected_sets: dict[str, GeneSet] = {}
        assignment: dict[FeatureType, str | None] = {}
        for ft, name in self.combo.assignment.items():
            if name is None:
                assignment[ft] = None
                continue
            matrix = self.matrices[ft]
            rows = [matrix.row_index(cl) for cl in train_ids]
            k = min(self.k, len(matrix.gene_ids))
            genes = univariate_select(
                ft, matrix.values[rows], matrix.gene_ids, y_train, k
            )
            set_name = f"{UNIVARIATE_NAME}_{ft.prefix}"
            selected_sets[set_name] = GeneSet(name=set_name, genes=frozenset(genes))
            assignment[ft] = set_name
        return build_design_matrix(
            Combo(assignment),
            self.matrices,
            selected_sets,
            self.cell_lines,
            self.options,
            observe_ids=train_ids,
        )


@dataclass(frozen=True)
class _Task:
    drug: str
    algorithm: str
    combo_id: str
    univariate: bool
    cell_lines: tuple[str, ...]
    seed: int
    plan: SplitPlan


_WORKER_CTX: dict | None = None


def _evaluate_task(task: _Task, config: MasRunConfig, inputs: MasInputs) -> EvaluationResult:
    y = inputs.responses[task.drug]
    options = config.encoding
    if task.univariate:
        combo = Combo(
            {
                ft: (UNIVARIATE_NAME if name is not None else None)
                for ft, name in parse_combo_id(task.combo_id).assignment.items()
            }
        )
        builder = _UnivariateBuilder(
            combo, inputs.matrices, y, config.univariate_k, list(task.cell_lines), options
        )
    else:
        builder = _ComboBuilder(
            parse_combo_id(task.combo_id),
            inputs.matrices,
            inputs.gene_sets,
            list(task.cell_lines),
            options,
        )
    return tune_and_evaluate(
        builder,
        y,
        task.algorithm,
        config.grids[task.algorithm],
        task.plan,
        task.cell_lines,
        base_seed=task.seed,
        collect_importances=task.algorithm != "svr_rbf",
    )


def _run_worker(idx: int) -> EvaluationResult:
    assert _WORKER_CTX is not None
    return _evaluate_task(
        _WORKER_CTX["tasks"][idx], _WORKER_CTX["config"], _WORKER_CTX["inputs"]
    )


def _execute_tasks(
    tasks: list[_Task], config: MasRunConfig, inputs: MasInputs, workers: int
) -> list[EvaluationResult]:
    if workers <= 1 or len(tasks) <= 1:
        return [_evaluate_task(t, config, inputs) for t in tasks]
    global _WORKER_CTX
    _WORKER_CTX = {"tasks": tasks, "config": config, "inputs": inputs}
    try:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=workers) as pool:
            return pool.map(_run_worker, range(len(tasks)), chunksize=1)
    finally:
        _WORKER_CTX = None


def run_mas(config: MasRunConfig, inputs: MasInputs, workers: int = 1) -> MasRunResult:
    """Evaluate every (algorithm, combo) per drug; record the best configuration.

    Output is deterministic for a fixed config seed regardless of worker count:
    task order and per-task seeds depend only on the sorted task list.
    """
    warnings: list[str] = []
    drugs = sorted(config.drugs if config.drugs is not None else inputs.responses)
    shared_cells = set.intersection(
        *(set(m.cell_line_ids) for m in inputs.matrices.values())
    )
    combo_ids = (
        [c.combo_id for c in enumerate_combos(list(inputs.gene_sets.values()), config.feature_types)]
        if inputs.gene_sets
        else []
    )
    univariate_ids = (
        [c.combo_id for c in _univariate_combos(config.feature_types)]
        if config.univariate
        else []
    )

    per_drug_cells: dict[str, tuple[str, ...]] = {}
    tasks: list[_Task] = []
    task_keys: list[tuple[str, str, str, bool]] = []
    for drug in drugs:
        if drug not in inputs.responses:
            warnings.append(f"drug {drug}: no responses available, skipped")
            continue
        responses = inputs.responses[drug]
        if config.response_kind in ("auc", "viability"):
            bad = [v for v in responses.values() if not 0.0 <= v <= 1.0]
            if bad:
                raise ValueError(
                    f"drug {drug}: {config.response_kind} responses must lie in [0, 1]"
                )
        cells = tuple(sorted(set(responses) & shared_cells))
        if len(cells) < config.min_cell_lines:
            warnings.append(
                f"drug {drug}: only {len(cells)} tested cell lines "
                f"(< {config.min_cell_lines}), skipped"
            )
            continue
        per_drug_cells[drug] = cells
        plan_seed = _derive_seed(config.seed, f"plan:{drug}")
        plan = SplitPlan(
            n_outer=config.plan.n_outer,
            outer_holdout_fraction=config.plan.outer_holdout_fraction,
            n_inner=config.plan.n_inner,
            inner_validation_fraction=config.plan.inner_validation_fraction,
            seed=plan_seed,
        )
        for algorithm in config.algorithms:
            for combo_id in combo_ids + univariate_ids:
                univ = combo_id in univariate_ids
                tasks.append(
                    _Task(
                        drug=drug,
                        algorithm=algorithm,
                        combo_id=combo_id,
                        univariate=univ,
                        cell_lines=cells,
                        seed=_derive_seed(config.seed, f"{drug}|{algorithm}|{combo_id}"),
                        plan=plan,
                    )
                )
                task_keys.append((drug, algorithm, combo_id, univ))

    results = _execute_tasks(tasks, config, inputs, workers)

    per_drug: dict[str, MasDrugResult] = {}
    for drug in per_drug_cells:
        evaluations = {}
        for (d, alg, combo_id, _), ev in zip(task_keys, results):
            if d == drug:
                evaluations[(alg, combo_id)] = ev
        order = combo_ids + univariate_ids
        best = _select_best(evaluations, config.algorithms, order, univariate_ids)
        if best is None:
            warnings.append(f"drug {drug}: no valid evaluation, no best configuration")
        for (alg, combo_id), ev in evaluations.items():
            if ev.failed_loops:
                warnings.append(
                    f"drug {drug} {alg} {combo_id}: failed outer loops {ev.failed_loops}"
                )
        per_drug[drug] = MasDrugResult(
            drug=drug,
            cell_lines=per_drug_cells[drug],
            combo_order=order,
            evaluations=evaluations,
            best=best,
        )
    return MasRunResult(per_drug=per_drug, warnings=warnings)


def _derive_seed(base: int, label: str) -> int:
    digest = [ord(c) for c in label]
    return int(np.random.SeedSequence([base, *digest]).generate_state(1)[0])


def _select_best(
    evaluations: Mapping[tuple[str, str], EvaluationResult],
    algorithms: Sequence[str],
    combo_order: Sequence[str],
    univariate_ids: Sequence[str],
) -> BestConfig | None:
    """Max mean R^2; ties by lower variance, algorithm order, combo order.

    Univariate pseudo-combos are comparison baselines and are not eligible as
    the handoff configuration.
    """
    alg_rank = {a: i for i, a in enumerate(ALGORITHM_ORDER)}
    combo_rank = {c: i for i, c in enumerate(combo_order)}
    candidates = []
    for (alg, combo_id), ev in evaluations.items():
        if combo_id in set(univariate_ids) or not ev.valid:
            continue
        candidates.append(
            (-ev.mean_r2, ev.r2_variance, alg_rank[alg], combo_rank[combo_id], alg, combo_id, ev)
        )
    if not candidates:
        return None
    candidates.sort(key=lambda t: t[:4])
    _, _, _, _, alg, combo_id, ev = candidates[0]
    return BestConfig(
        algorithm=alg,
        combo_id=combo_id,
        hyperparameters=_modal_params(ev.chosen_params),
        mean_r2=ev.mean_r2,
    )


def _modal_params(chosen: Sequence[dict]) -> dict:
    """Most frequently chosen grid point across outer loops; ties by JSON order."""
    keys = [json.dumps(p, sort_keys=True) for p in chosen]
    counts = Counter(keys)
    best_key = min(counts, key=lambda k: (-counts[k], k))
    return json.loads(best_key)


def compare_gene_set(drug_result: MasDrugResult, set_name: str) -> GeneSetComparison:
    """Rank-sum comparison of combo mean R^2 with vs without a gene set.

    Usage counts one increment per feature-type slot in the top-5 combos of
    each algorithm.
    """
    univ = {c for c in drug_result.combo_order if _is_univariate(c)}
    with_values: list[float] = []
    without_values: list[float] = []
    seen = False
    for (alg, combo_id), ev in sorted(drug_result.evaluations.items()):
        if combo_id in univ:
            continue
        combo = parse_combo_id(combo_id)
        if combo.uses(set_name):
            seen = True
            with_values.append(ev.mean_r2)
        else:
            without_values.append(ev.mean_r2)
    if not seen:
        raise ValueError(f"gene set {set_name!r} absent from run")
    if not without_values:
        raise ValueError(f"gene set {set_name!r} appears in every combo; no comparison group")
    p_value = ranksum_test(np.array(with_values), np.array(without_values))

    usage = 0
    combo_rank = {c: i for i, c in enumerate(drug_result.combo_order)}
    algorithms = sorted({alg for alg, _ in drug_result.evaluations})
    for alg in algorithms:
        entries = [
            (-(ev.mean_r2), combo_rank[combo_id], combo_id)
            for (a, combo_id), ev in drug_result.evaluations.items()
            if a == alg and combo_id not in univ and ev.valid
        ]
        entries.sort()
        for _, _, combo_id in entries[:TOP_COMBOS_PER_ALGORITHM]:
            combo = parse_combo_id(combo_id)
            usage += sum(1 for name in combo.assignment.values() if name == set_name)
    return GeneSetComparison(
        set_name=set_name,
        with_values=tuple(with_values),
        without_values=tuple(without_values),
        p_value=float(p_value),
        usage_count=usage,
    )


def aggregate_importances(
    drug_result: MasDrugResult,
    top_k_combos: int = DEFAULT_TOP_K_IMPORTANCE,
    algorithm: str | None = None,
) -> dict[str, float] | None:
    """Loop-averaged importances, equal-weighted over the top-k combos by mean R^2.

    Returns None when no evaluated configuration provides importances.
    """
    alg_rank = {a: i for i, a in enumerate(ALGORITHM_ORDER)}
    combo_rank = {c: i for i, c in enumerate(drug_result.combo_order)}
    entries = []
    for (alg, combo_id), ev in drug_result.evaluations.items():
        if algorithm is not None and alg != algorithm:
            continue
        if ev.importances is None or not ev.valid:
            continue
        loop_imps = [imp for imp in ev.importances if imp is not None]
        if not loop_imps:
            continue
        entries.append((-(ev.mean_r2), alg_rank[alg], combo_rank[combo_id], loop_imps))
    if not entries:
        return None
    entries.sort(key=lambda t: t[:3])
    aggregate: dict[str, float] = {}
    top = entries[:top_k_combos]
    for *_, loop_imps in top:
        combo_avg: dict[str, float] = {}
        for imp in loop_imps:
            for col, w in imp.items():
                combo_avg[col] = combo_avg.get(col, 0.0) + w / len(loop_imps)
        for col, w in combo_avg.items():
            aggregate[col] = aggregate.get(col, 0.0) + w / len(top)
    total = sum(aggregate.values())
    if total > 0:
        aggregate = {col: w / total for col, w in aggregate.items()}
    return aggregate
