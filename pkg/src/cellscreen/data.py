"""Data model and ingestion for feature matrices, gene sets, tissue labels, and combos.

File formats:
  - feature matrix: CSV, first header cell ``cell_line_id``, remaining header
    cells gene ids, one row per cell line. Mutation files hold integer codes
    0-6 (0 = wild type).
  - gene set: one gene id per line; the file stem is the set name.
  - tissue labels: CSV with columns ``cell_line_id,tissue_type``.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MUTATION_CODE_MAX = 6


class DataFormatError(ValueError):
    """An input file or in-memory structure violates the declared format."""


class FeatureType(Enum):
    EXPRESSION = "expression"
    MUTATION = "mutation"
    COPY_NUMBER = "copy_number"

    @property
    def prefix(self) -> str:
        return _COLUMN_PREFIX[self]


_COLUMN_PREFIX = {
    FeatureType.EXPRESSION: "expr",
    FeatureType.MUTATION: "mut",
    FeatureType.COPY_NUMBER: "cnum",
}

#: Canonical ordering used for combo ids and design matrix columns.
FEATURE_TYPE_ORDER = (
    FeatureType.EXPRESSION,
    FeatureType.MUTATION,
    FeatureType.COPY_NUMBER,
)

TISSUE_PREFIX = "tissue"


@dataclass(frozen=True)
class FeatureMatrix:
    """Cell lines x genes for a single feature type.

    Expression and copy number values are real; mutation values are integer
    categorical codes in [0, 6].
    """

    feature_type: FeatureType
    cell_line_ids: tuple[str, ...]
    gene_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise DataFormatError("feature values must be a 2-d matrix")
        if values.shape != (len(self.cell_line_ids), len(self.gene_ids)):
            raise DataFormatError(
                f"value shape {values.shape} does not match "
                f"{len(self.cell_line_ids)} cell lines x {len(self.gene_ids)} genes"
            )
        _check_unique(self.cell_line_ids, "cell line id")
        _check_unique(self.gene_ids, "gene id")
        if self.feature_type is FeatureType.MUTATION:
            if not np.all(np.isfinite(values)):
                raise DataFormatError("mutation matrix contains non-finite values")
            if np.any(values != np.round(values)):
                raise DataFormatError("mutation codes must be integers")
            if np.any((values < 0) | (values > MUTATION_CODE_MAX)):
                raise DataFormatError("mutation code out of range [0, 6]")
        else:
            if np.any(np.isnan(values)):
                raise DataFormatError(f"{self.feature_type.value} matrix contains NaN")
        object.__setattr__(
            self, "_row_index", {cl: i for i, cl in enumerate(self.cell_line_ids)}
        )
        object.__setattr__(
            self, "_col_index", {g: j for j, g in enumerate(self.gene_ids)}
        )

    def row_index(self, cell_line: str) -> int:
        try:
            return self._row_index[cell_line]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(
                f"cell line {cell_line!r} absent from {self.feature_type.value} matrix"
            ) from None

    def has_cell_line(self, cell_line: str) -> bool:
        return cell_line in self._row_index  # type: ignore[attr-defined]

    def gene_index(self, gene: str) -> int:
        return self._col_index[gene]  # type: ignore[attr-defined]

    def has_gene(self, gene: str) -> bool:
        return gene in self._col_index  # type: ignore[attr-defined]


@dataclass(frozen=True)
class GeneSet:
    name: str
    genes: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "genes", frozenset(self.genes))
        if not self.genes:
            raise DataFormatError(f"gene set {self.name!r} is empty")


@dataclass(frozen=True)
class Combo:
    """Assignment of (gene set name or None) to each feature type."""

    assignment: Mapping[FeatureType, str | None]

    def __post_init__(self) -> None:
        assignment = dict(self.assignment)
        object.__setattr__(self, "assignment", assignment)
        if not any(name is not None for name in assignment.values()):
            raise DataFormatError("combo must assign at least one gene set")

    @property
    def combo_id(self) -> str:
        parts = []
        for ft in FEATURE_TYPE_ORDER:
            if ft in self.assignment:
                name = self.assignment[ft]
                parts.append(f"{ft.prefix}:{name if name is not None else 'none'}")
        return "|".join(parts)

    def uses(self, set_name: str) -> bool:
        return set_name in self.assignment.values()

    def __hash__(self) -> int:
        return hash(self.combo_id)


_PREFIX_TO_TYPE = {ft.prefix: ft for ft in FEATURE_TYPE_ORDER}


def parse_combo_id(combo_id: str) -> Combo:
    """Inverse of :attr:`Combo.combo_id`."""
    assignment: dict[FeatureType, str | None] = {}
    for part in combo_id.split("|"):
        prefix, _, name = part.partition(":")
        if prefix not in _PREFIX_TO_TYPE or not name:
            raise DataFormatError(f"malformed combo id {combo_id!r}")
        assignment[_PREFIX_TO_TYPE[prefix]] = None if name == "none" else name
    return Combo(assignment)


@dataclass(frozen=True)
class TissueLabels:
    labels: Mapping[str, str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", dict(self.labels))

    def tissue_of(self, cell_line: str) -> str:
        return self.labels[cell_line]


@dataclass(frozen=True)
class EncodingOptions:
    """Design matrix encoding switches.

    ``binary_mutation`` collapses mutation codes to mutated-vs-not; otherwise
    one indicator column per observed code is emitted. ``include_tissue``
    appends one-hot tissue indicator columns from ``tissue_labels``.
    """

    binary_mutation: bool = False
    include_tissue: bool = False
    tissue_labels: TissueLabels | None = None

    def __post_init__(self) -> None:
        if self.include_tissue and self.tissue_labels is None:
            raise DataFormatError("include_tissue requires tissue_labels")


@dataclass(frozen=True)
class DesignMatrix:
    cell_line_ids: tuple[str, ...]
    column_names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.cell_line_ids), len(self.column_names)):
            raise DataFormatError("design matrix shape mismatch")
        object.__setattr__(
            self, "_row_index", {cl: i for i, cl in enumerate(self.cell_line_ids)}
        )

    def rows(self, cell_lines: Sequence[str]) -> np.ndarray:
        idx = [self._row_index[cl] for cl in cell_lines]  # type: ignore[attr-defined]
        return self.values[idx]


def _check_unique(items: Sequence[str], kind: str) -> None:
    seen: set[str] = set()
    for item in items:
        if item in seen:
            raise DataFormatError(f"duplicate {kind} {item!r}")
        seen.add(item)


def load_feature_matrix(path: str | Path, feature_type: FeatureType) -> FeatureMatrix:
    """Load a feature matrix CSV, preserving cell line and gene order."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if not header or header[0] != "cell_line_id":
            raise DataFormatError(
                f"{path}: malformed header, first cell must be 'cell_line_id'"
            )
        gene_ids = tuple(header[1:])
        if not gene_ids:
            raise DataFormatError(f"{path}: header contains no gene ids")
        cell_lines: list[str] = []
        rows: list[list[float]] = []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}"
                )
            cell_lines.append(row[0])
            parsed: list[float] = []
            for col_num, cell in enumerate(row[1:], start=2):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: non-numeric cell at (row {row_num}, col {col_num})"
                    ) from None
                if feature_type is FeatureType.MUTATION and not (
                    value == int(value) and 0 <= value <= MUTATION_CODE_MAX
                ):
                    raise DataFormatError(
                        f"{path}: mutation code out of range at (row {row_num}, col {col_num})"
                    )
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return FeatureMatrix(
        feature_type=feature_type,
        cell_line_ids=tuple(cell_lines),
        gene_ids=gene_ids,
        values=np.array(rows, dtype=float),
    )


def save_feature_matrix(matrix: FeatureMatrix, path: str | Path) -> None:
    """Write a feature matrix in the load format (round-trips bit-exactly)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_line_id", *matrix.gene_ids])
        for cl, row in zip(matrix.cell_line_ids, matrix.values):
            writer.writerow([cl, *(repr(float(v)) for v in row)])


def load_gene_set(path: str | Path) -> GeneSet:
    path = Path(path)
    genes: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        gene = line.strip()
        if gene:
            genes.append(gene)
    _check_unique(genes, "gene")
    return GeneSet(name=path.stem, genes=frozenset(genes))


def save_gene_set(gene_set: GeneSet, directory: str | Path) -> Path:
    path = Path(directory) / f"{gene_set.name}.txt"
    path.write_text("".join(f"{g}\n" for g in sorted(gene_set.genes)), encoding="utf-8")
    return path


def load_tissue_labels(path: str | Path) -> TissueLabels:
    path = Path(path)
    labels: dict[str, str] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cell_line_id", "tissue_type"]:
            raise DataFormatError(f"{path}: expected header 'cell_line_id,tissue_type'")
        for row_num, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataFormatError(f"{path}: malformed row {row_num}")
            if row[0] in labels:
                raise DataFormatError(f"{path}: duplicate cell line id {row[0]!r}")
            labels[row[0]] = row[1]
    return TissueLabels(labels)


def save_tissue_labels(labels: TissueLabels, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_line_id", "tissue_type"])
        for cl in sorted(labels.labels):
            writer.writerow([cl, labels.labels[cl]])


def enumerate_combos(
    gene_sets: Sequence[GeneSet], feature_types: Sequence[FeatureType]
) -> list[Combo]:
    """All assignments of (each gene set or None) per feature type, minus all-None.

    Deterministic order: feature types in canonical order, gene set names
    lexicographic, None last. With k sets and t types this yields
    (k + 1)^t - 1 combos.
    """
    if not gene_sets:
        raise ValueError("gene_sets must be non-empty")
    if not feature_types:
        raise ValueError("feature_types must be non-empty")
    types = [ft for ft in FEATURE_TYPE_ORDER if ft in set(feature_types)]
    options: list[str | None] = [*sorted(gs.name for gs in gene_sets), None]
    combos = []
    for choice in itertools.product(options, repeat=len(types)):
        if all(name is None for name in choice):
            continue
        combos.append(Combo(dict(zip(types, choice))))
    return combos


def build_design_matrix(
    combo: Combo,
    matrices: Mapping[FeatureType, FeatureMatrix],
    gene_sets: Mapping[str, GeneSet],
    cell_lines: Sequence[str],
    options: EncodingOptions = EncodingOptions(),
    observe_ids: Sequence[str] | None = None,
) -> DesignMatrix:
    """Assemble the encoded design matrix for a combo.

    Categorical levels (mutation codes, tissue types) are discovered from
    ``observe_ids`` rows only (default: all requested rows) so that column
    construction can be restricted to training data. Genes in a set but
    absent from the matrix are dropped (counted in the run log).

    Pure function: identical inputs produce identical columns and values.
    """
    observe = list(observe_ids) if observe_ids is not None else list(cell_lines)
    columns: list[str] = []
    blocks: list[np.ndarray] = []
    dropped = 0

    for ft in FEATURE_TYPE_ORDER:
        name = combo.assignment.get(ft)
        if name is None:
            continue
        if name not in gene_sets:
            raise KeyError(f"combo references unknown gene set {name!r}")
        if ft not in matrices:
            raise KeyError(f"no {ft.value} matrix supplied for combo {combo.combo_id}")
        matrix = matrices[ft]
        genes = sorted(g for g in gene_sets[name].genes if matrix.has_gene(g))
        dropped += len(gene_sets[name].genes) - len(genes)
        if not genes:
            continue
        rows = [matrix.row_index(cl) for cl in cell_lines]
        cols = [matrix.gene_index(g) for g in genes]
        block = matrix.values[np.ix_(rows, cols)]
        if ft is FeatureType.MUTATION:
            if options.binary_mutation:
                blocks.append((block != 0).astype(float))
                columns.extend(f"{ft.prefix}:{g}" for g in genes)
            else:
                obs_rows = [matrix.row_index(cl) for cl in observe]
                obs_block = matrix.values[np.ix_(obs_rows, cols)]
                for j, gene in enumerate(genes):
                    codes = sorted(int(c) for c in np.unique(obs_block[:, j]))
                    for code in codes:
                        blocks.append((block[:, j : j + 1] == code).astype(float))
                        columns.append(f"{ft.prefix}:{gene}={code}")
        else:
            blocks.append(block)
            columns.extend(f"{ft.prefix}:{g}" for g in genes)

    if options.include_tissue:
        assert options.tissue_labels is not None
        labels = options.tissue_labels
        try:
            observed_types = sorted({labels.tissue_of(cl) for cl in observe})
            row_types = [labels.tissue_of(cl) for cl in cell_lines]
        except KeyError as exc:
            raise DataFormatError(f"cell line missing tissue label: {exc}") from None
        for tissue in observed_types:
            col = np.array([1.0 if t == tissue else 0.0 for t in row_types])
            blocks.append(col[:, None])
            columns.append(f"{TISSUE_PREFIX}:{tissue}")

    if dropped:
        logger.info(
            "combo %s: dropped %d gene(s) absent from feature matrices",
            combo.combo_id,
            dropped,
        )
    if blocks:
        values = np.hstack(blocks)
    else:
        values = np.empty((len(cell_lines), 0))
    return DesignMatrix(
        cell_line_ids=tuple(cell_lines),
        column_names=tuple(columns),
        values=values,
    )
