"""Long-format measurement CSV in, results CSV out."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .rank_tests import PairwiseComparison, TestResult

LONG_CSV_HEADER = ["subject", "condition", "phase", "measure", "value"]
RESULTS_CSV_HEADER = ["method", "statistic", "df", "p", "effect_size"]


@dataclass(frozen=True)
class MeasurementRow:
    subject: str
    condition: str
    phase: str
    measure: str
    value: float


def load_long_csv(path) -> list[MeasurementRow]:
    rows: list[MeasurementRow] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != LONG_CSV_HEADER:
            raise ValueError(f"expected header {','.join(LONG_CSV_HEADER)}")
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise ValueError(f"row {i}: expected 5 values, got {len(row)}")
            try:
                value = float(row[4])
            except ValueError as e:
                raise ValueError(f"row {i}: {e}") from e
            rows.append(MeasurementRow(row[0], row[1], row[2], row[3], value))
    return rows


def measures(rows: list[MeasurementRow]) -> list[str]:
    return sorted({r.measure for r in rows})


def grouped_by_condition(rows: list[MeasurementRow], measure: str) -> tuple[list[str], list[list[float]]]:
    """Condition labels plus per-condition value lists (condition-sorted)."""
    filtered = [r for r in rows if r.measure == measure]
    conditions = sorted({r.condition for r in filtered})
    groups = [
        [r.value for r in filtered if r.condition == c] for c in conditions
    ]
    return conditions, groups


def blocked_matrix(rows: list[MeasurementRow], measure: str) -> tuple[list[str], list[str], list[list[float]]]:
    """Subjects x conditions matrix; every cell must be present exactly once."""
    filtered = [r for r in rows if r.measure == measure]
    subjects = sorted({r.subject for r in filtered})
    conditions = sorted({r.condition for r in filtered})
    cells: dict[tuple[str, str], float] = {}
    for r in filtered:
        key = (r.subject, r.condition)
        if key in cells:
            raise ValueError(f"duplicate cell for subject {r.subject!r}, condition {r.condition!r}")
        cells[key] = r.value
    matrix = []
    for s in subjects:
        row = []
        for c in conditions:
            if (s, c) not in cells:
                raise ValueError(f"missing cell for subject {s!r}, condition {c!r}")
            row.append(cells[(s, c)])
        matrix.append(row)
    return subjects, conditions, matrix


def paired_by_phase(rows: list[MeasurementRow], measure: str, condition: str) -> list[tuple[float, float]]:
    """(phase_a, phase_b) pairs per subject, phases taken in sorted order."""
    filtered = [r for r in rows if r.measure == measure and r.condition == condition]
    phases = sorted({r.phase for r in filtered})
    if len(phases) != 2:
        raise ValueError(
            f"pairing needs exactly 2 phases for {measure!r}/{condition!r}, got {phases}"
        )
    by_subject: dict[str, dict[str, float]] = {}
    for r in filtered:
        by_subject.setdefault(r.subject, {})[r.phase] = r.value
    pairs = []
    for s in sorted(by_subject):
        vals = by_subject[s]
        if set(vals) != set(phases):
            raise ValueError(f"subject {s!r} is missing a phase for {measure!r}/{condition!r}")
        pairs.append((vals[phases[0]], vals[phases[1]]))
    return pairs


def _fmt(v: float | None) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def write_results_csv(results: list[TestResult | PairwiseComparison], path, labels: list[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(RESULTS_CSV_HEADER) + "\n")
        for i, r in enumerate(results):
            label = labels[i] if labels else None
            if isinstance(r, TestResult):
                method = label or r.method
                f.write(
                    f"{method},{_fmt(r.statistic)},{_fmt(r.df)},{_fmt(r.p_value)},{_fmt(r.effect_size)}\n"
                )
            else:
                method = label or f"dunn_sidak[{r.group_a} vs {r.group_b}]"
                f.write(
                    f"{method},{_fmt(r.z_value)},,{_fmt(r.p_adjusted)},{_fmt(r.effect_size)}\n"
                )
