"""Synthetic cell-line worlds with planted ground truth for end-to-end verification.

Viability at level c follows sigmoid(shift + latent - slope * c) with slope > 0,
so dose-response rows are monotone non-increasing in concentration. The latent
term combines a per-drug genomic score over planted informative genes, an
optional tissue effect, and Gaussian noise drawn once per (drug, cell line).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import (
    FeatureMatrix,
    FeatureType,
    GeneSet,
    TissueLabels,
    save_feature_matrix,
    save_gene_set,
    save_tissue_labels,
)
from .dose import (
    DoseResponseTable,
    N_LEVELS,
    calibrate_concentration,
    save_auc,
    save_dose_response,
    viability_at,
)


@dataclass(frozen=True)
class DrugSpec:
    name: str
    informative_genes: tuple[str, ...]
    effect_weights: tuple[float, ...]
    link: str = "linear"  # linear | threshold | interaction
    informative_type: FeatureType = FeatureType.EXPRESSION

    def __post_init__(self) -> None:
        if len(self.informative_genes) != len(self.effect_weights):
            raise ValueError(f"drug {self.name}: weights must match informative genes")
        if self.link not in ("linear", "threshold", "interaction"):
            raise ValueError(f"drug {self.name}: unknown link {self.link!r}")


@dataclass(frozen=True)
class SyntheticSpec:
    n_cell_lines: int
    n_genes: int
    drugs: tuple[DrugSpec, ...]
    noise_sigma: float = 0.1
    n_tissues: int = 1
    tissue_effect: float = 0.0
    missingness: float = 0.0
    seed: int = 0
    mutation_rate: float = 0.15
    genomic_gain: float = 1.5
    dose_shift: float = 2.2
    dose_slope: float = 0.55
    planted_extra_genes: int = 10

    def __post_init__(self) -> None:
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.missingness < 1.0:
            raise ValueError("missingness must lie in [0, 1)")
        if self.n_tissues < 1:
            raise ValueError("n_tissues must be >= 1")
        universe = set(gene_names(self.n_genes))
        for drug in self.drugs:
            outside = set(drug.informative_genes) - universe
            if outside:
                raise ValueError(
                    f"drug {drug.name}: informative genes outside universe: {sorted(outside)[:3]}"
                )


@dataclass(frozen=True)
class GroundTruth:
    calibrated_levels: dict[str, int]
    true_viability: dict[str, dict[str, float]]  # cell line -> drug -> viability
    best_drug: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "calibrated_levels": self.calibrated_levels,
            "true_viability": self.true_viability,
            "best_drug": self.best_drug,
        }


@dataclass(frozen=True)
class SyntheticWorld:
    spec: SyntheticSpec
    matrices: dict[FeatureType, FeatureMatrix]
    gene_sets: dict[str, GeneSet]
    tissue_labels: TissueLabels
    dose_tables: dict[str, DoseResponseTable]
    auc: dict[str, dict[str, float]]
    truth: GroundTruth


def gene_names(n_genes: int) -> list[str]:
    return [f"g{i:04d}" for i in range(n_genes)]


def cell_names(n_cells: int) -> list[str]:
    return [f"cl{i:04d}" for i in range(n_cells)]


def random_drug_specs(
    n_drugs: int,
    n_informative: int,
    n_genes: int,
    seed: int,
    link: str = "linear",
    informative_type: FeatureType = FeatureType.EXPRESSION,
) -> tuple[DrugSpec, ...]:
    """Convenience factory: per-drug informative genes sampled without replacement."""
    rng = np.random.default_rng(seed)
    genes = gene_names(n_genes)
    specs = []
    for d in range(n_drugs):
        chosen = sorted(rng.choice(n_genes, size=n_informative, replace=False))
        weights = rng.normal(1.0, 0.25, size=n_informative) * rng.choice([-1.0, 1.0], size=n_informative)
        specs.append(
            DrugSpec(
                name=f"drug{d:02d}",
                informative_genes=tuple(genes[g] for g in chosen),
                effect_weights=tuple(float(w) for w in weights),
                link=link,
                informative_type=informative_type,
            )
        )
    return tuple(specs)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _genomic_score(
    drug: DrugSpec, matrices: Mapping[FeatureType, FeatureMatrix]
) -> np.ndarray:
    matrix = matrices[drug.informative_type]
    cols = [matrix.gene_index(g) for g in drug.informative_genes]
    X = matrix.values[:, cols]
    if drug.informative_type is FeatureType.MUTATION:
        X = (X != 0).astype(float)
    w = np.array(drug.effect_weights)
    if drug.link == "linear":
        score = X @ w
    elif drug.link == "threshold":
        score = (X > 0).astype(float) @ w
    else:  # interaction: consecutive pairwise products
        pair = X[:, :-1] * X[:, 1:] if X.shape[1] > 1 else X
        score = pair @ (w[: pair.shape[1]])
    std = score.std()
    if std > 0:
        score = (score - score.mean()) / std
    return score


def generate(spec: SyntheticSpec) -> SyntheticWorld:
    """Generate a complete seeded world; identical seeds yield bit-identical output."""
    rng = np.random.default_rng(spec.seed)
    genes = gene_names(spec.n_genes)
    cells = cell_names(spec.n_cell_lines)
    n, g = spec.n_cell_lines, spec.n_genes

    expression = rng.standard_normal((n, g))
    mutated = rng.random((n, g)) < spec.mutation_rate
    codes = rng.integers(1, 7, size=(n, g))
    mutation = np.where(mutated, codes, 0).astype(float)
    copy_number = rng.integers(-2, 3, size=(n, g)).astype(float)

    matrices = {
        FeatureType.EXPRESSION: FeatureMatrix(
            FeatureType.EXPRESSION, tuple(cells), tuple(genes), expression
        ),
        FeatureType.MUTATION: FeatureMatrix(
            FeatureType.MUTATION, tuple(cells), tuple(genes), mutation
        ),
        FeatureType.COPY_NUMBER: FeatureMatrix(
            FeatureType.COPY_NUMBER, tuple(cells), tuple(genes), copy_number
        ),
    }

    tissue_of_cell = rng.integers(0, spec.n_tissues, size=n)
    tissue_labels = TissueLabels(
        {cell: f"tissue{t}" for cell, t in zip(cells, tissue_of_cell)}
    )

    levels = np.arange(N_LEVELS)
    dose_tables: dict[str, DoseResponseTable] = {}
    auc: dict[str, dict[str, float]] = {}
    gene_sets: dict[str, GeneSet] = {}

    for drug in spec.drugs:
        score = _genomic_score(drug, matrices)
        tissue_shift = rng.standard_normal(spec.n_tissues) * spec.tissue_effect
        noise = rng.standard_normal(n) * spec.noise_sigma
        latent = spec.genomic_gain * (score + noise) + tissue_shift[tissue_of_cell]
        viability = _sigmoid(
            spec.dose_shift + latent[:, None] - spec.dose_slope * levels[None, :]
        )
        tested = rng.random(n) >= spec.missingness
        kept = [i for i in range(n) if tested[i]]
        dose_tables[drug.name] = DoseResponseTable(
            drug_id=drug.name,
            cell_line_ids=tuple(cells[i] for i in kept),
            viabilities=viability[kept],
        )
        auc[drug.name] = {cells[i]: float(viability[i].mean()) for i in kept}

        extra_pool = sorted(set(genes) - set(drug.informative_genes))
        extra = rng.choice(len(extra_pool), size=min(spec.planted_extra_genes, len(extra_pool)), replace=False)
        planted = set(drug.informative_genes) | {extra_pool[int(e)] for e in extra}
        gene_sets[f"planted_{drug.name}"] = GeneSet(
            name=f"planted_{drug.name}", genes=frozenset(planted)
        )

    calibrated: dict[str, int] = {}
    true_viability: dict[str, dict[str, float]] = {}
    for drug_name, table in dose_tables.items():
        dose = calibrate_concentration(table)
        calibrated[drug_name] = dose.level
        for cell in table.cell_line_ids:
            value = viability_at(table, cell, dose.level)
            if value is not None:
                true_viability.setdefault(cell, {})[drug_name] = value
    best_drug = {
        cell: min(per_drug, key=lambda d: (per_drug[d], d))
        for cell, per_drug in true_viability.items()
    }

    return SyntheticWorld(
        spec=spec,
        matrices=matrices,
        gene_sets=gene_sets,
        tissue_labels=tissue_labels,
        dose_tables=dose_tables,
        auc=auc,
        truth=GroundTruth(
            calibrated_levels=calibrated,
            true_viability=true_viability,
            best_drug=best_drug,
        ),
    )


def write_world(world: SyntheticWorld, outdir: str | Path) -> dict[str, Path]:
    """Write the world in the exact ingestion file formats; returns path map."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    names = {
        FeatureType.EXPRESSION: "expression.csv",
        FeatureType.MUTATION: "mutation.csv",
        FeatureType.COPY_NUMBER: "copy_number.csv",
    }
    for ft, matrix in world.matrices.items():
        path = outdir / names[ft]
        save_feature_matrix(matrix, path)
        paths[ft.value] = path
    sets_dir = outdir / "gene_sets"
    sets_dir.mkdir(exist_ok=True)
    paths["gene_sets"] = sets_dir
    for gene_set in world.gene_sets.values():
        save_gene_set(gene_set, sets_dir)
    paths["tissue"] = outdir / "tissue.csv"
    save_tissue_labels(world.tissue_labels, paths["tissue"])
    paths["dose_response"] = outdir / "dose_response.csv"
    save_dose_response(world.dose_tables, paths["dose_response"])
    paths["auc"] = outdir / "auc.csv"
    save_auc(world.auc, paths["auc"])
    paths["ground_truth"] = outdir / "ground_truth.json"
    paths["ground_truth"].write_text(
        json.dumps(world.truth.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    return paths
