"""Dose-response handling: concentration calibration, viability lookup, ranking.

File formats:
  - dose-response: CSV ``drug_id,cell_line_id,level_0,...,level_9`` with empty
    cells for missing measurements; viabilities lie in [0, 1].
  - AUC: CSV ``drug_id,cell_line_id,auc``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import DataFormatError

logger = logging.getLogger(__name__)

N_LEVELS = 10
DEFAULT_TARGET_VIABILITY = 0.75
#: Fraction of tested cell lines a level must cover to be calibration-eligible.
COVERAGE_THRESHOLD = 0.5

_TIE_TOL = 1e-12


class CalibrationError(ValueError):
    """No concentration level meets the coverage threshold."""


@dataclass(frozen=True)
class DoseResponseTable:
    """Per cell line viabilities for one drug at normalized levels 0-9 (NaN = missing)."""

    drug_id: str
    cell_line_ids: tuple[str, ...]
    viabilities: np.ndarray  # shape (n_cell_lines, 10)

    def __post_init__(self) -> None:
        v = np.asarray(self.viabilities, dtype=float)
        object.__setattr__(self, "viabilities", v)
        if v.shape != (len(self.cell_line_ids), N_LEVELS):
            raise DataFormatError(
                f"drug {self.drug_id}: viability matrix must be n x {N_LEVELS}"
            )
        measured = ~np.isnan(v)
        if np.any((v[measured] < 0) | (v[measured] > 1)):
            raise DataFormatError(f"drug {self.drug_id}: viabilities must lie in [0, 1]")
        object.__setattr__(
            self, "_row_index", {cl: i for i, cl in enumerate(self.cell_line_ids)}
        )

    def has_cell_line(self, cell_line: str) -> bool:
        return cell_line in self._row_index  # type: ignore[attr-defined]

    def row(self, cell_line: str) -> np.ndarray:
        return self.viabilities[self._row_index[cell_line]]  # type: ignore[attr-defined]


@dataclass(frozen=True)
class CalibratedDose:
    drug_id: str
    level: int
    mean_viability: float


def calibrate_concentration(
    table: DoseResponseTable,
    target: float = DEFAULT_TARGET_VIABILITY,
    exclude: Sequence[str] = (),
) -> CalibratedDose:
    """Pick the level whose mean viability over measured cell lines is closest to target.

    Only levels measured for at least half the tested cell lines are eligible;
    equidistant candidates resolve to the lower level. ``exclude`` drops cell
    lines from the calibration average (used for leave-one-out runs).
    """
    keep = [i for i, cl in enumerate(table.cell_line_ids) if cl not in set(exclude)]
    values = table.viabilities[keep]
    n_tested = len(keep)
    if n_tested == 0:
        raise CalibrationError(f"drug {table.drug_id}: no cell lines to calibrate on")
    best_level = None
    best_diff = np.inf
    best_mean = np.nan
    for level in range(N_LEVELS):
        col = values[:, level]
        measured = ~np.isnan(col)
        if measured.sum() < COVERAGE_THRESHOLD * n_tested or not measured.any():
            continue
        mean = float(col[measured].mean())
        diff = abs(mean - target)
        if diff < best_diff - _TIE_TOL:
            best_level, best_diff, best_mean = level, diff, mean
    if best_level is None:
        raise CalibrationError(
            f"drug {table.drug_id}: no level meets the {COVERAGE_THRESHOLD:.0%} coverage threshold"
        )
    return CalibratedDose(drug_id=table.drug_id, level=best_level, mean_viability=best_mean)


def viability_at(table: DoseResponseTable, cell_line: str, level: int) -> float | None:
    """Measured viability or None when the pair is unmeasured."""
    if not 0 <= level < N_LEVELS:
        raise ValueError(f"level {level} outside 0-{N_LEVELS - 1}")
    if not table.has_cell_line(cell_line):
        return None
    value = table.row(cell_line)[level]
    return None if np.isnan(value) else float(value)


def normalize_viabilities(v: Mapping[str, float]) -> dict[str, float]:
    """Map viabilities to [0, 1]: 0 = best (lowest) drug, 1 = worst drug.

    All-equal inputs degenerate to all zeros (flagged in the log).
    """
    if len(v) < 2:
        raise ValueError("need at least 2 drugs with measured viability")
    vmin = min(v.values())
    vmax = max(v.values())
    if vmax == vmin:
        logger.warning("normalize_viabilities: all values equal, mapping all to 0")
        return {d: 0.0 for d in v}
    return {d: (x - vmin) / (vmax - vmin) for d, x in v.items()}


def true_rank(v: Mapping[str, float], drug: str) -> int:
    """1 + number of drugs with strictly lower viability; ties share the better rank."""
    if drug not in v:
        raise KeyError(f"drug {drug!r} has no measured viability")
    return 1 + sum(1 for x in v.values() if x < v[drug])


def load_dose_response(path: str | Path) -> dict[str, DoseResponseTable]:
    path = Path(path)
    expected = ["drug_id", "cell_line_id", *(f"level_{k}" for k in range(N_LEVELS))]
    per_drug: dict[str, tuple[list[str], list[list[float]]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise DataFormatError(f"{path}: expected header {','.join(expected)}")
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise DataFormatError(f"{path}: malformed row {row_num}")
            drug, cell = row[0], row[1]
            try:
                levels = [float(x) if x != "" else np.nan for x in row[2:]]
            except ValueError:
                raise DataFormatError(f"{path}: non-numeric viability at row {row_num}") from None
            cells, values = per_drug.setdefault(drug, ([], []))
            if cell in cells:
                raise DataFormatError(f"{path}: duplicate pair ({drug}, {cell}) at row {row_num}")
            cells.append(cell)
            values.append(levels)
    return {
        drug: DoseResponseTable(
            drug_id=drug, cell_line_ids=tuple(cells), viabilities=np.array(values)
        )
        for drug, (cells, values) in per_drug.items()
    }


def save_dose_response(tables: Mapping[str, DoseResponseTable], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["drug_id", "cell_line_id", *(f"level_{k}" for k in range(N_LEVELS))])
        for drug in sorted(tables):
            table = tables[drug]
            for cl, row in zip(table.cell_line_ids, table.viabilities):
                writer.writerow(
                    [drug, cl, *("" if np.isnan(x) else repr(float(x)) for x in row)]
                )


def load_auc(path: str | Path) -> dict[str, dict[str, float]]:
    path = Path(path)
    out: dict[str, dict[str, float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["drug_id", "cell_line_id", "auc"]:
            raise DataFormatError(f"{path}: expected header 'drug_id,cell_line_id,auc'")
        for row_num, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataFormatError(f"{path}: malformed row {row_num}")
            try:
                value = float(row[2])
            except ValueError:
                raise DataFormatError(f"{path}: non-numeric auc at row {row_num}") from None
            out.setdefault(row[0], {})[row[1]] = value
    return out


def save_auc(auc: Mapping[str, Mapping[str, float]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["drug_id", "cell_line_id", "auc"])
        for drug in sorted(auc):
            for cell in sorted(auc[drug]):
                writer.writerow([drug, cell, repr(float(auc[drug][cell]))])
