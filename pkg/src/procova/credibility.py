"""Assemble the documentation tables and the adequacy decision.

A credibility report gathers the design features, the evaluation table with
relevance grades, a quantified risk table (floor power under pessimistic VR),
the mitigation inventory, and a written reduction recommendation, all with
provenance. Rendering is deterministic; the JSON form round-trips losslessly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Sequence

from .cohort import RelevanceGrade
from .design import (
    ArmSizes,
    ReductionKind,
    ReductionStrategy,
    TrialDesign,
    power_at,
    required_sample_size,
)
from .errors import DomainError, ReportValidationError
from .evaluation import BootstrapSummary, EvaluationResult

SCHEMA_VERSION = 1


class MitigationKind(Enum):
    CONSERVATIVE_VR = "conservative_vr"
    BLINDED_SSR = "blinded_ssr"
    STANDARD_COVARIATE_PROTECTION = "standard_covariate_protection"
    OTHER = "other"


@dataclass(frozen=True)
class MitigationItem:
    kind: MitigationKind
    description: str
    quantitative_benefit: str = ""
    conservative_factor: float | None = None

    def __post_init__(self):
        if self.kind is MitigationKind.CONSERVATIVE_VR:
            if self.conservative_factor is None or not (0.0 < self.conservative_factor <= 1.0):
                raise DomainError(
                    "a conservative_vr mitigation needs a conservative_factor in (0, 1]"
                )
        elif self.conservative_factor is not None:
            raise DomainError("conservative_factor only applies to conservative_vr mitigations")


@dataclass(frozen=True)
class RiskRow:
    vr_floor: float
    achieved_power: float
    information_fraction: float


@dataclass(frozen=True)
class RiskTable:
    rows: tuple[RiskRow, ...]
    sizes_before: ArmSizes
    sizes_after: ArmSizes
    meaningfulness_note: str = ""


@dataclass(frozen=True)
class RiskTolerance:
    """Judgment inputs for the reduction decision; both are mandatory."""

    min_acceptable_floor_power: float
    min_meaningful_reduction: int

    def __post_init__(self):
        if not (0.0 < self.min_acceptable_floor_power < 1.0):
            raise DomainError("min_acceptable_floor_power must be in (0, 1)")
        if self.min_meaningful_reduction < 0:
            raise DomainError("min_meaningful_reduction must be nonnegative")


@dataclass(frozen=True)
class Recommendation:
    reduce: bool
    justification: str
    chosen_sizes: ArmSizes | None = None
    chosen_vr: float | None = None
    cited_cohorts: tuple[str, ...] = ()


@dataclass(frozen=True)
class DesignEntry:
    endpoint: str
    design: TrialDesign
    strategy: ReductionStrategy
    sizes_before: ArmSizes
    sizes_after: ArmSizes
    power_before: float | None = None
    power_after: float | None = None


@dataclass(frozen=True)
class EvaluationRow:
    result: EvaluationResult
    relevance: RelevanceGrade


@dataclass(frozen=True)
class Provenance:
    tool_version: str
    seeds: dict[str, int]
    input_digests: dict[str, str]


@dataclass(frozen=True)
class CredibilityReport:
    question_of_interest: str
    context_of_use: str
    design_table: tuple[DesignEntry, ...]
    evaluation_table: tuple[EvaluationRow, ...]
    risk_table: RiskTable
    mitigations: tuple[MitigationItem, ...]
    recommendation: Recommendation
    provenance: Provenance
    schema_version: int = SCHEMA_VERSION


def risk_quantification(
    design: TrialDesign,
    reduced: ArmSizes,
    vr_floors: Sequence[float],
    meaningfulness_note: str = "",
) -> RiskTable:
    """Power at the reduced sizes for each pessimistic VR floor.

    The information fraction compares the floor against the design
    assumption: a zero floor under an assumed 10% VR gives 0.9.
    """
    if not vr_floors:
        raise DomainError("need at least one VR floor")
    rows = []
    for floor in sorted(set(float(v) for v in vr_floors)):
        if not (0.0 <= floor < 1.0):
            raise DomainError(f"VR floors must be in [0, 1), got {floor}")
        rows.append(
            RiskRow(
                vr_floor=floor,
                achieved_power=power_at(replace(design, assumed_vr=floor), reduced),
                information_fraction=(1.0 - design.assumed_vr) / (1.0 - floor),
            )
        )
    before = required_sample_size(replace(design, assumed_vr=0.0))
    return RiskTable(
        rows=tuple(rows),
        sizes_before=before,
        sizes_after=reduced,
        meaningfulness_note=meaningfulness_note,
    )


def recommend_reduction(
    evaluation_table: Sequence[EvaluationResult],
    design: TrialDesign,
    tolerance: RiskTolerance,
    candidate_vrs: Sequence[float] | None = None,
    mitigations: Sequence[MitigationItem] = (),
) -> Recommendation:
    """Pick the largest supportable VR, or decline with the reason.

    Candidates default to the evaluation table's vr_full values; an explicit
    list lets the sponsor restrict the decision to round planning values.
    Conservative-VR mitigations shrink every candidate by their factor. A
    candidate qualifies when its zero-VR floor power meets the tolerance and
    its reduction against the unadjusted design is meaningful.
    """
    if not evaluation_table:
        raise ReportValidationError("the evaluation table is empty")
    candidates = list(candidate_vrs) if candidate_vrs is not None else [
        r.vr_full for r in evaluation_table
    ]
    for item in mitigations:
        if item.kind is MitigationKind.CONSERVATIVE_VR:
            candidates = [v * item.conservative_factor for v in candidates]
    for v in candidates:
        if not (0.0 <= v < 1.0):
            raise DomainError(f"candidate VRs must be in [0, 1), got {v}")

    cited = tuple(sorted({r.cohort_id for r in evaluation_table}))
    unadjusted = required_sample_size(replace(design, assumed_vr=0.0))
    floor_failures = []
    meaningfulness_failures = []
    for v in sorted(set(candidates), reverse=True):
        reduced = required_sample_size(replace(design, assumed_vr=v))
        floor_power = power_at(replace(design, assumed_vr=0.0), reduced)
        reduction = unadjusted.n_total - reduced.n_total
        floor_ok = floor_power + 1e-12 >= tolerance.min_acceptable_floor_power
        meaningful = reduction >= tolerance.min_meaningful_reduction
        if floor_ok and meaningful:
            justification = (
                f"Assumed VR {v:.4f} reduces the completer total from "
                f"{unadjusted.n_total} to {reduced.n_total} ({reduction} participants, "
                f"minimum meaningful {tolerance.min_meaningful_reduction}); with zero "
                f"prognostic benefit the power floor is {floor_power:.4f} against a "
                f"minimum of {tolerance.min_acceptable_floor_power:.4f}. Supported by "
                f"evaluation results from: {', '.join(cited)}."
            )
            return Recommendation(
                reduce=True,
                justification=justification,
                chosen_sizes=reduced,
                chosen_vr=v,
                cited_cohorts=cited,
            )
        if floor_ok:
            meaningfulness_failures.append((v, reduction))
        else:
            floor_failures.append((v, floor_power))

    reasons = []
    if meaningfulness_failures:
        v, reduction = meaningfulness_failures[0]
        reasons.append(
            f"the largest reduction within the power-floor tolerance is {reduction} "
            f"participants (VR {v:.4f}), below the meaningfulness minimum of "
            f"{tolerance.min_meaningful_reduction}"
        )
    if floor_failures:
        v, floor_power = floor_failures[-1]
        reasons.append(
            f"candidate VRs down to {v:.4f} leave the zero-benefit power floor at "
            f"{floor_power:.4f}, under the minimum of "
            f"{tolerance.min_acceptable_floor_power:.4f}"
        )
    justification = (
        "No sample-size reduction is recommended: " + "; ".join(reasons) + ". "
        f"Evidence considered: {', '.join(cited)}."
    )
    return Recommendation(reduce=False, justification=justification, cited_cohorts=cited)


def assemble_report(
    question_of_interest: str,
    context_of_use: str,
    designs: Sequence[DesignEntry],
    evaluation_results: Sequence[EvaluationResult],
    relevance: Mapping[str, RelevanceGrade],
    risk_table: RiskTable,
    mitigations: Sequence[MitigationItem],
    recommendation: Recommendation,
    provenance: Provenance,
) -> CredibilityReport:
    """Validate cross-references and compute the design-table powers."""
    if not evaluation_results:
        raise ReportValidationError("at least one evaluation result is required")
    if not designs:
        raise ReportValidationError("at least one design entry is required")

    cohorts = {r.cohort_id for r in evaluation_results}
    for cited in recommendation.cited_cohorts:
        if cited not in cohorts:
            raise ReportValidationError(
                f"recommendation cites cohort {cited!r} which is not in the evaluation table"
            )
    missing = sorted(cohorts - set(relevance))
    if missing:
        raise ReportValidationError(f"missing relevance grades for cohorts: {missing}")

    if recommendation.reduce:
        if recommendation.chosen_sizes is None:
            raise ReportValidationError("a reduce recommendation must carry chosen sizes")
        if all(recommendation.chosen_sizes != d.sizes_after for d in designs):
            raise ReportValidationError(
                "recommendation sizes do not match any design-table row"
            )

    design_table = tuple(
        replace(
            entry,
            power_before=power_at(replace(entry.design, assumed_vr=0.0), entry.sizes_before),
            power_after=power_at(entry.design, entry.sizes_after),
        )
        for entry in designs
    )
    evaluation_table = tuple(
        EvaluationRow(result=r, relevance=relevance[r.cohort_id]) for r in evaluation_results
    )
    return CredibilityReport(
        question_of_interest=question_of_interest,
        context_of_use=context_of_use,
        design_table=design_table,
        evaluation_table=evaluation_table,
        risk_table=risk_table,
        mitigations=tuple(mitigations),
        recommendation=recommendation,
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _sizes_to_dict(sizes: ArmSizes) -> dict:
    return {
        "n_treatment": sizes.n_treatment,
        "n_control": sizes.n_control,
        "n_total": sizes.n_total,
        "n_enrolled_total": sizes.n_enrolled_total,
    }


def _sizes_from_dict(data: dict) -> ArmSizes:
    return ArmSizes(
        n_treatment=data["n_treatment"],
        n_control=data["n_control"],
        n_total=data["n_total"],
        n_enrolled_total=data["n_enrolled_total"],
    )


def _design_to_dict(design: TrialDesign) -> dict:
    return {
        "alpha": design.alpha,
        "target_power": design.target_power,
        "effect_size": design.effect_size,
        "endpoint_sd": design.endpoint_sd,
        "allocation_ratio": list(design.allocation_ratio),
        "dropout_rate": design.dropout_rate,
        "assumed_vr": design.assumed_vr,
        "endpoint_label": design.endpoint_label,
    }


def _design_from_dict(data: dict) -> TrialDesign:
    return TrialDesign(
        alpha=data["alpha"],
        target_power=data["target_power"],
        effect_size=data["effect_size"],
        endpoint_sd=data["endpoint_sd"],
        allocation_ratio=tuple(data["allocation_ratio"]),
        dropout_rate=data["dropout_rate"],
        assumed_vr=data["assumed_vr"],
        endpoint_label=data["endpoint_label"],
    )


def report_to_dict(report: CredibilityReport) -> dict:
    return {
        "schema_version": report.schema_version,
        "question_of_interest": report.question_of_interest,
        "context_of_use": report.context_of_use,
        "design_table": [
            {
                "endpoint": d.endpoint,
                "design": _design_to_dict(d.design),
                "strategy": {
                    "kind": d.strategy.kind.value,
                    "realized_fraction": d.strategy.realized_fraction,
                },
                "sizes_before": _sizes_to_dict(d.sizes_before),
                "sizes_after": _sizes_to_dict(d.sizes_after),
                "power_before": d.power_before,
                "power_after": d.power_after,
            }
            for d in report.design_table
        ],
        "evaluation_table": [
            {
                "cohort_id": row.result.cohort_id,
                "endpoint": row.result.endpoint,
                "timepoint": row.result.timepoint,
                "n_evaluable": row.result.n_evaluable,
                "vr_standard": row.result.vr_standard,
                "vr_full": row.result.vr_full,
                "vr_incremental": row.result.vr_incremental,
                "method": row.result.method,
                "bootstrap": None
                if row.result.bootstrap is None
                else {
                    "mean": row.result.bootstrap.mean,
                    "percentile": row.result.bootstrap.percentile,
                    "percentile_value": row.result.bootstrap.percentile_value,
                    "n_replicates": row.result.bootstrap.n_replicates,
                    "n_skipped": row.result.bootstrap.n_skipped,
                    "seed": row.result.bootstrap.seed,
                },
                "relevance": {"level": row.relevance.level, "rationale": row.relevance.rationale},
            }
            for row in report.evaluation_table
        ],
        "risk_table": {
            "rows": [
                {
                    "vr_floor": r.vr_floor,
                    "achieved_power": r.achieved_power,
                    "information_fraction": r.information_fraction,
                }
                for r in report.risk_table.rows
            ],
            "sizes_before": _sizes_to_dict(report.risk_table.sizes_before),
            "sizes_after": _sizes_to_dict(report.risk_table.sizes_after),
            "meaningfulness_note": report.risk_table.meaningfulness_note,
        },
        "mitigations": [
            {
                "kind": m.kind.value,
                "description": m.description,
                "quantitative_benefit": m.quantitative_benefit,
                "conservative_factor": m.conservative_factor,
            }
            for m in report.mitigations
        ],
        "recommendation": {
            "reduce": report.recommendation.reduce,
            "justification": report.recommendation.justification,
            "chosen_sizes": None
            if report.recommendation.chosen_sizes is None
            else _sizes_to_dict(report.recommendation.chosen_sizes),
            "chosen_vr": report.recommendation.chosen_vr,
            "cited_cohorts": list(report.recommendation.cited_cohorts),
        },
        "provenance": {
            "tool_version": report.provenance.tool_version,
            "seeds": dict(sorted(report.provenance.seeds.items())),
            "input_digests": dict(sorted(report.provenance.input_digests.items())),
        },
    }


def report_from_dict(data: dict) -> CredibilityReport:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ReportValidationError(
            f"unsupported schema_version {data.get('schema_version')!r}"
        )
    design_table = tuple(
        DesignEntry(
            endpoint=d["endpoint"],
            design=_design_from_dict(d["design"]),
            strategy=ReductionStrategy(
                kind=ReductionKind(d["strategy"]["kind"]),
                realized_fraction=d["strategy"]["realized_fraction"],
            ),
            sizes_before=_sizes_from_dict(d["sizes_before"]),
            sizes_after=_sizes_from_dict(d["sizes_after"]),
            power_before=d["power_before"],
            power_after=d["power_after"],
        )
        for d in data["design_table"]
    )
    evaluation_table = tuple(
        EvaluationRow(
            result=EvaluationResult(
                cohort_id=row["cohort_id"],
                endpoint=row["endpoint"],
                timepoint=row["timepoint"],
                n_evaluable=row["n_evaluable"],
                vr_standard=row["vr_standard"],
                vr_full=row["vr_full"],
                vr_incremental=row["vr_incremental"],
                method=row["method"],
                bootstrap=None
                if row["bootstrap"] is None
                else BootstrapSummary(
                    mean=row["bootstrap"]["mean"],
                    percentile=row["bootstrap"]["percentile"],
                    percentile_value=row["bootstrap"]["percentile_value"],
                    n_replicates=row["bootstrap"]["n_replicates"],
                    n_skipped=row["bootstrap"]["n_skipped"],
                    seed=row["bootstrap"]["seed"],
                ),
            ),
            relevance=RelevanceGrade(
                level=row["relevance"]["level"], rationale=row["relevance"]["rationale"]
            ),
        )
        for row in data["evaluation_table"]
    )
    risk = data["risk_table"]
    risk_table = RiskTable(
        rows=tuple(
            RiskRow(
                vr_floor=r["vr_floor"],
                achieved_power=r["achieved_power"],
                information_fraction=r["information_fraction"],
            )
            for r in risk["rows"]
        ),
        sizes_before=_sizes_from_dict(risk["sizes_before"]),
        sizes_after=_sizes_from_dict(risk["sizes_after"]),
        meaningfulness_note=risk["meaningfulness_note"],
    )
    rec = data["recommendation"]
    recommendation = Recommendation(
        reduce=rec["reduce"],
        justification=rec["justification"],
        chosen_sizes=None if rec["chosen_sizes"] is None else _sizes_from_dict(rec["chosen_sizes"]),
        chosen_vr=rec["chosen_vr"],
        cited_cohorts=tuple(rec["cited_cohorts"]),
    )
    return CredibilityReport(
        question_of_interest=data["question_of_interest"],
        context_of_use=data["context_of_use"],
        design_table=design_table,
        evaluation_table=evaluation_table,
        risk_table=risk_table,
        mitigations=tuple(
            MitigationItem(
                kind=MitigationKind(m["kind"]),
                description=m["description"],
                quantitative_benefit=m["quantitative_benefit"],
                conservative_factor=m["conservative_factor"],
            )
            for m in data["mitigations"]
        ),
        recommendation=recommendation,
        provenance=Provenance(
            tool_version=data["provenance"]["tool_version"],
            seeds=dict(data["provenance"]["seeds"]),
            input_digests=dict(data["provenance"]["input_digests"]),
        ),
    )


def parse_report_json(payload: bytes | str) -> CredibilityReport:
    if isinstance(payload, bytes):
        payload = payload.decode("utf-8")
    return report_from_dict(json.loads(payload))


def _pct(value: float) -> str:
    return f"{100.0 * value:.1f}%"


def render_markdown(report: CredibilityReport) -> bytes:
    lines: list[str] = []
    lines.append("# Credibility assessment report")
    lines.append("")
    lines.append("## Question of interest")
    lines.append("")
    lines.append(report.question_of_interest)
    lines.append("")
    lines.append("## Context of use")
    lines.append("")
    lines.append(report.context_of_use)
    lines.append("")

    lines.append("## Design features")
    lines.append("")
    lines.append(
        "| endpoint | alpha | target power | strategy | n before (t/c) | n after (t/c) "
        "| power before | power after |"
    )
    lines.append("|---|---|---|---|---|---|---|---|")
    for d in report.design_table:
        lines.append(
            f"| {d.endpoint} | {d.design.alpha:g} | {d.design.target_power:g} "
            f"| {d.strategy.kind.value} "
            f"| {d.sizes_before.n_total} ({d.sizes_before.n_treatment}/{d.sizes_before.n_control}) "
            f"| {d.sizes_after.n_total} ({d.sizes_after.n_treatment}/{d.sizes_after.n_control}) "
            f"| {d.power_before:.3f} | {d.power_after:.3f} |"
        )
    lines.append("")

    lines.append("## Evaluation results")
    lines.append("")
    lines.append(
        "| cohort | endpoint | timepoint | n | VR standard | VR full | VR incremental "
        "| method | relevance |"
    )
    lines.append("|---|---|---|---|---|---|---|---|---|")
    for row in report.evaluation_table:
        r = row.result
        lines.append(
            f"| {r.cohort_id} | {r.endpoint} | {r.timepoint} | {r.n_evaluable} "
            f"| {_pct(r.vr_standard)} | {_pct(r.vr_full)} | {_pct(r.vr_incremental)} "
            f"| {r.method} | {row.relevance.level} |"
        )
    lines.append("")

    lines.append("## Risk quantification")
    lines.append("")
    before = report.risk_table.sizes_before
    after = report.risk_table.sizes_after
    lines.append(
        f"Planned reduction: {before.n_total} -> {after.n_total} completers "
        f"({before.n_total - after.n_total} fewer)."
    )
    lines.append("")
    lines.append("| VR floor | achieved power | information fraction |")
    lines.append("|---|---|---|")
    for r in report.risk_table.rows:
        lines.append(
            f"| {_pct(r.vr_floor)} | {r.achieved_power:.4f} | {r.information_fraction:.4f} |"
        )
    lines.append("")
    if report.risk_table.meaningfulness_note:
        lines.append(report.risk_table.meaningfulness_note)
        lines.append("")

    lines.append("## Risk mitigations")
    lines.append("")
    if report.mitigations:
        for m in report.mitigations:
            detail = f" ({m.quantitative_benefit})" if m.quantitative_benefit else ""
            factor = (
                f" [factor {m.conservative_factor:g}]" if m.conservative_factor is not None else ""
            )
            lines.append(f"- **{m.kind.value}**{factor}: {m.description}{detail}")
    else:
        lines.append("none declared")
    lines.append("")

    lines.append("## Recommendation")
    lines.append("")
    decision = "Reduce the sample size." if report.recommendation.reduce else "Do not reduce the sample size."
    lines.append(decision)
    lines.append("")
    lines.append(report.recommendation.justification)
    lines.append("")

    lines.append("## Provenance")
    lines.append("")
    lines.append(f"- tool version: {report.provenance.tool_version}")
    for name, seed in sorted(report.provenance.seeds.items()):
        lines.append(f"- seed {name}: {seed}")
    for name, digest in sorted(report.provenance.input_digests.items()):
        lines.append(f"- sha256 {name}: {digest}")
    lines.append("")
    return "\n".join(lines).encode("utf-8")


def render(report: CredibilityReport, format: str = "json") -> bytes:
    """Serialize a report; JSON round-trips losslessly through parse_report_json."""
    if format == "json":
        text = json.dumps(report_to_dict(report), indent=2, sort_keys=True)
        return (text + "\n").encode("utf-8")
    if format == "markdown":
        return render_markdown(report)
    raise DomainError(f"unknown render format {format!r}")
