"""Participant-level cohort data and its CSV schema.

CSV layout, one row per participant:

    participant_id, arm (optional), completed_<tp>, baseline_<name>,
    score_<endpoint>_<tp>, outcome_<endpoint>_<tp>

An empty cell means missing. A missing ``completed_<tp>`` column leaves
completion inferred from outcome presence.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DomainError

Cell = tuple[str, str]  # (endpoint, timepoint)


@dataclass(frozen=True)
class RelevanceGrade:
    """User-supplied judgment of how relevant a cohort is to the planned trial."""

    level: str
    rationale: str = ""

    def __post_init__(self):
        if self.level not in ("high", "medium", "low"):
            raise DomainError(f"relevance level must be high/medium/low, got {self.level!r}")


@dataclass(frozen=True)
class Participant:
    participant_id: str
    arm: str | None = None
    baseline: dict[str, float] = field(default_factory=dict)
    scores: dict[Cell, float] = field(default_factory=dict)
    outcomes: dict[Cell, float] = field(default_factory=dict)
    completed: dict[str, bool] = field(default_factory=dict)

    def is_complete(self, timepoint: str) -> bool:
        return self.completed.get(timepoint, True)


@dataclass(frozen=True)
class CohortData:
    cohort_id: str
    participants: tuple[Participant, ...]
    relevance: RelevanceGrade | None = None
    source_digest: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "participants", tuple(self.participants))
        seen = set()
        for p in self.participants:
            if p.participant_id in seen:
                raise DataFormatError(f"duplicate participant_id {p.participant_id!r}")
            seen.add(p.participant_id)

    def __len__(self) -> int:
        return len(self.participants)

    def evaluable(self, endpoint: str, timepoint: str) -> list[Participant]:
        """Participants with both score and outcome observed for the cell."""
        cell = (endpoint, timepoint)
        return [
            p
            for p in self.participants
            if cell in p.scores and cell in p.outcomes and p.is_complete(timepoint)
        ]

    def feature_names(self) -> list[str]:
        names: set[str] = set()
        for p in self.participants:
            names.update(p.baseline)
        return sorted(names)

    def without_arms(self) -> "CohortData":
        stripped = tuple(replace(p, arm=None) for p in self.participants)
        return replace(self, participants=stripped)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"cell {text!r} is not numeric", row=row, column=column) from None
    if not math.isfinite(value):
        raise DataFormatError(f"cell {text!r} is not finite", row=row, column=column)
    return value


def _parse_flag(text: str, row: int, column: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes"):
        return True
    if lowered in ("0", "false", "no"):
        return False
    raise DataFormatError(f"cell {text!r} is not a 0/1 flag", row=row, column=column)


def _split_cell_column(name: str, prefix: str) -> Cell:
    rest = name[len(prefix):]
    if "_" not in rest:
        raise DataFormatError(f"column {name!r} must look like {prefix}<endpoint>_<timepoint>")
    endpoint, timepoint = rest.rsplit("_", 1)
    if not endpoint or not timepoint:
        raise DataFormatError(f"column {name!r} must look like {prefix}<endpoint>_<timepoint>")
    return endpoint, timepoint


def load_cohort_csv(path: str | Path, cohort_id: str | None = None) -> CohortData:
    """Read and schema-validate a cohort CSV, recording its content digest."""
    path = Path(path)
    digest = file_digest(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path} is empty") from None

        if "participant_id" not in header:
            raise DataFormatError("missing required column participant_id")
        plan: list[tuple[str, object]] = []
        for name in header:
            if name == "participant_id":
                plan.append(("id", None))
            elif name == "arm":
                plan.append(("arm", None))
            elif name.startswith("completed_"):
                plan.append(("completed", name[len("completed_"):]))
            elif name.startswith("baseline_"):
                plan.append(("baseline", name[len("baseline_"):]))
            elif name.startswith("score_"):
                plan.append(("score", _split_cell_column(name, "score_")))
            elif name.startswith("outcome_"):
                plan.append(("outcome", _split_cell_column(name, "outcome_")))
            else:
                raise DataFormatError(f"unrecognized column {name!r}")

        participants: list[Participant] = []
        seen: dict[str, int] = {}
        for row_number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(
                    f"expected {len(header)} cells, found {len(row)}", row=row_number
                )
            pid = ""
            arm: str | None = None
            baseline: dict[str, float] = {}
            scores: dict[Cell, float] = {}
            outcomes: dict[Cell, float] = {}
            completed: dict[str, bool] = {}
            for (kind, key), cell in zip(plan, row):
                text = cell.strip()
                if kind == "id":
                    pid = text
                elif not text:
                    continue
                elif kind == "arm":
                    arm = text
                elif kind == "completed":
                    completed[key] = _parse_flag(text, row_number, f"completed_{key}")
                elif kind == "baseline":
                    baseline[key] = _parse_float(text, row_number, f"baseline_{key}")
                elif kind == "score":
                    scores[key] = _parse_float(text, row_number, f"score_{key[0]}_{key[1]}")
                elif kind == "outcome":
                    outcomes[key] = _parse_float(text, row_number, f"outcome_{key[0]}_{key[1]}")
            if not pid:
                raise DataFormatError("participant_id is empty", row=row_number)
            if pid in seen:
                raise DataFormatError(
                    f"duplicate participant_id {pid!r} (first seen at row {seen[pid]})",
                    row=row_number,
                )
            seen[pid] = row_number
            participants.append(
                Participant(
                    participant_id=pid,
                    arm=arm,
                    baseline=baseline,
                    scores=scores,
                    outcomes=outcomes,
                    completed=completed,
                )
            )

    return CohortData(
        cohort_id=cohort_id or path.stem,
        participants=tuple(participants),
        source_digest=digest,
    )


def write_cohort_csv(cohort: CohortData, path: str | Path) -> None:
    """Write a cohort in the canonical column order with full float precision."""
    timepoints = sorted({tp for p in cohort.participants for tp in p.completed})
    features = cohort.feature_names()
    cells = sorted({c for p in cohort.participants for c in p.scores}
                   | {c for p in cohort.participants for c in p.outcomes})
    has_arm = any(p.arm is not None for p in cohort.participants)

    header = ["participant_id"]
    if has_arm:
        header.append("arm")
    header += [f"completed_{tp}" for tp in timepoints]
    header += [f"baseline_{name}" for name in features]
    header += [f"score_{ep}_{tp}" for ep, tp in cells]
    header += [f"outcome_{ep}_{tp}" for ep, tp in cells]

    def fmt(value: float | None) -> str:
        return "" if value is None else repr(value)

    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for p in cohort.participants:
            row = [p.participant_id]
            if has_arm:
                row.append(p.arm or "")
            row += ["" if tp not in p.completed else ("1" if p.completed[tp] else "0")
                    for tp in timepoints]
            row += [fmt(p.baseline.get(name)) for name in features]
            row += [fmt(p.scores.get(cell)) for cell in cells]
            row += [fmt(p.outcomes.get(cell)) for cell in cells]
            writer.writerow(row)


@dataclass(frozen=True)
class CorrelatedCell:
    """Recipe for one (endpoint, timepoint) cell of a synthetic cohort.

    The first ``n_present`` participants receive score/outcome values whose
    sample correlation is exactly ``r`` (up to float rounding); the rest get
    missing cells, which is how shorter studies are represented.
    """

    endpoint: str
    timepoint: str
    r: float
    n_present: int | None = None
    score_location: float = 0.0
    score_scale: float = 1.0
    outcome_location: float = 0.0
    outcome_scale: float = 1.0


def exact_correlation_pair(n: int, r: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two length-n vectors whose sample Pearson correlation is exactly r."""
    if n < 3:
        raise DomainError("need n >= 3 for an exact-correlation pair")
    if not (-1.0 <= r <= 1.0):
        raise DomainError("r must be in [-1, 1]")
    u = rng.standard_normal(n)
    u -= u.mean()
    u /= np.linalg.norm(u)
    v = rng.standard_normal(n)
    v -= v.mean()
    v -= (u @ v) * u
    v /= np.linalg.norm(v)
    return u, r * u + math.sqrt(max(0.0, 1.0 - r * r)) * v


def synthetic_correlated_cohort(
    cohort_id: str,
    n: int,
    cells: list[CorrelatedCell] | tuple[CorrelatedCell, ...],
    seed: int,
    baseline_features: tuple[str, ...] = (),
) -> CohortData:
    """Cohort whose per-cell score/outcome sample correlations are exact by construction."""
    master = np.random.SeedSequence(seed)
    scores_by_cell: dict[Cell, np.ndarray] = {}
    outcomes_by_cell: dict[Cell, np.ndarray] = {}
    n_present: dict[Cell, int] = {}
    for index, cell in enumerate(cells):
        m = cell.n_present if cell.n_present is not None else n
        if m > n:
            raise DomainError(f"cell {cell.endpoint}/{cell.timepoint} has n_present > n")
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
        u, w = exact_correlation_pair(m, cell.r, rng)
        key = (cell.endpoint, cell.timepoint)
        scores_by_cell[key] = cell.score_location + cell.score_scale * u
        outcomes_by_cell[key] = cell.outcome_location + cell.outcome_scale * w
        n_present[key] = m

    feature_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(len(cells),)))
    feature_values = {name: feature_rng.standard_normal(n) for name in baseline_features}

    width = len(str(n))
    participants = []
    for i in range(n):
        scores = {key: float(vals[i]) for key, vals in scores_by_cell.items() if i < n_present[key]}
        outcomes = {key: float(vals[i]) for key, vals in outcomes_by_cell.items() if i < n_present[key]}
        baseline = {name: float(vals[i]) for name, vals in feature_values.items()}
        participants.append(
            Participant(
                participant_id=f"{cohort_id}-{i + 1:0{width}d}".replace(" ", "_"),
                baseline=baseline,
                scores=scores,
                outcomes=outcomes,
            )
        )
    return CohortData(cohort_id=cohort_id, participants=tuple(participants))
