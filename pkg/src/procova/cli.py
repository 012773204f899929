"""Command-line entry point.

Subcommands:

    design    sizes and per-endpoint powers from a design config
    evaluate  cohort CSVs -> variance-reduction table CSV
    simulate  scenario config -> empirical operating characteristics (JSON)
    curves    power-versus-n or power-versus-information-fraction CSV data
    report    full credibility report (JSON + Markdown)

Exit codes: 0 success, 1 computation error, 2 usage, 3 data error. Outputs
are written atomically and every run writes a manifest with the seed and
input digests; reruns with the same inputs are byte-identical. The
PROCOVA_WORKERS environment variable only parallelizes simulation work and
never changes results.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import tomli

from . import __version__
from .cohort import RelevanceGrade, file_digest, load_cohort_csv
from .credibility import (
    DesignEntry,
    MitigationItem,
    MitigationKind,
    Provenance,
    RiskTolerance,
    assemble_report,
    recommend_reduction,
    render,
    risk_quantification,
)
from .design import (
    ArmSizes,
    ReductionKind,
    ReductionStrategy,
    TrialDesign,
    apply_reduction,
    power_at,
    power_curve,
    power_vs_effective_fraction,
    required_sample_size,
)
from .errors import DataFormatError, ProcovaError
from .evaluation import evaluate_cohort
from .simulation import (
    Adjustment,
    ScenarioSpec,
    SsrPlan,
    run_monte_carlo,
    simulate_with_ssr,
)

STOCHASTIC_SUBCOMMANDS = ("simulate",)


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    config: Path | None
    out: Path
    seed: int | None = None
    reps: int | None = None
    vr_values: tuple[float, ...] = ()
    n_range: tuple[int, int, int] | None = None
    fractions: tuple[float, float, float] | None = None
    design_powers: tuple[float, ...] = ()
    endpoint: str | None = None


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _parse_int_range(text: str) -> tuple[int, int, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    try:
        start, stop, step = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integer start:stop:step, got {text!r}")
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("range must have stop >= start and step > 0")
    return start, stop, step


def _parse_float_range(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numeric start:stop:step, got {text!r}")
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("range must have stop >= start and step > 0")
    return start, stop, step


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="procova",
        description="Trial design with prognostic covariate adjustment.",
    )
    parser.add_argument("--version", action="version", version=f"procova {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required,
                       help="TOML configuration file")
        p.add_argument("--out", type=Path, required=True, help="output directory")

    p_design = sub.add_parser("design", help="sample sizes and per-endpoint powers")
    common(p_design)

    p_eval = sub.add_parser("evaluate", help="variance-reduction table from cohort CSVs")
    common(p_eval)

    p_sim = sub.add_parser("simulate", help="Monte Carlo operating characteristics")
    common(p_sim)
    p_sim.add_argument("--seed", type=int, help="master RNG seed (required)")
    p_sim.add_argument("--reps", type=int, help="override the configured replication count")

    p_curves = sub.add_parser("curves", help="power curve CSV data")
    common(p_curves)
    p_curves.add_argument("--vr", type=_parse_float_list, default=(),
                          help="comma-separated VR values, e.g. 0,0.15")
    p_curves.add_argument("--n", type=_parse_int_range,
                          help="completer totals as start:stop:step, e.g. 500:1500:10")
    p_curves.add_argument("--fractions", type=_parse_float_range,
                          help="information fractions as start:stop:step, e.g. 0.5:1.0:0.01")
    p_curves.add_argument("--design-powers", type=_parse_float_list, default=(),
                          help="design powers for the fraction curve, e.g. 0.80,0.90")
    p_curves.add_argument("--endpoint", help="endpoint label to plot (default: first)")

    p_report = sub.add_parser("report", help="credibility report (JSON + Markdown)")
    common(p_report)
    p_report.add_argument("--seed", type=int, help="seed recorded in provenance")

    return parser


def parse_args(argv) -> RunConfig:
    parser = _build_parser()
    ns = parser.parse_args(argv)
    if ns.subcommand in STOCHASTIC_SUBCOMMANDS and ns.seed is None:
        parser.error(f"{ns.subcommand} is stochastic and requires --seed")
    if ns.subcommand == "curves" and ns.n is None and ns.fractions is None:
        parser.error("curves requires --n or --fractions")
    return RunConfig(
        subcommand=ns.subcommand,
        config=ns.config,
        out=ns.out,
        seed=getattr(ns, "seed", None),
        reps=getattr(ns, "reps", None),
        vr_values=tuple(getattr(ns, "vr", ()) or ()),
        n_range=getattr(ns, "n", None),
        fractions=getattr(ns, "fractions", None),
        design_powers=tuple(getattr(ns, "design_powers", ()) or ()),
        endpoint=getattr(ns, "endpoint", None),
    )


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------

def _load_toml(path: Path) -> dict:
    try:
        with path.open("rb") as handle:
            return tomli.load(handle)
    except FileNotFoundError:
        raise DataFormatError(f"config file {path} does not exist") from None
    except tomli.TOMLDecodeError as exc:
        raise DataFormatError(f"config file {path} is not valid TOML: {exc}") from None


def _require(table: dict, key: str, context: str):
    if key not in table:
        raise DataFormatError(f"missing key {key!r} in {context}")
    return table[key]


def _design_from_config(common: dict, endpoint: dict) -> TrialDesign:
    merged = {**common, **endpoint}
    return TrialDesign(
        alpha=_require(merged, "alpha", "design"),
        target_power=_require(merged, "target_power", "design"),
        effect_size=_require(merged, "effect_size", "design"),
        endpoint_sd=_require(merged, "endpoint_sd", "design"),
        allocation_ratio=tuple(merged.get("allocation_ratio", (1, 1))),
        dropout_rate=merged.get("dropout_rate", 0.0),
        assumed_vr=merged.get("assumed_vr", 0.0),
        endpoint_label=merged.get("label", merged.get("endpoint_label", "endpoint")),
    )


def _load_designs(config_path: Path) -> list[TrialDesign]:
    data = _load_toml(config_path)
    common = data.get("design", {})
    endpoints = data.get("endpoint", [])
    if not endpoints:
        if common:
            return [_design_from_config(common, {})]
        raise DataFormatError(f"{config_path} defines no [design] or [[endpoint]] tables")
    return [_design_from_config(common, ep) for ep in endpoints]


def _strategy_from_string(text: str) -> ReductionStrategy:
    if text.startswith("partial:"):
        return ReductionStrategy(
            kind=ReductionKind.PARTIAL_REALIZATION, realized_fraction=float(text.split(":", 1)[1])
        )
    try:
        return ReductionStrategy(kind=ReductionKind(text))
    except ValueError:
        raise DataFormatError(
            f"unknown strategy {text!r}; use maintain_ratio, control_arm_only, or partial:<f>"
        ) from None


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _json_bytes(data) -> bytes:
    return (json.dumps(data, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _write_manifest(config: RunConfig, inputs: dict[str, str], outputs: list[str]) -> None:
    manifest = {
        "tool_version": __version__,
        "subcommand": config.subcommand,
        "seed": config.seed,
        "inputs": dict(sorted(inputs.items())),
        "outputs": sorted(outputs),
    }
    _atomic_write(config.out / "manifest.json", _json_bytes(manifest))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_design(config: RunConfig) -> int:
    designs = _load_designs(config.config)
    per_endpoint = []
    for design in designs:
        unadjusted = required_sample_size(replace(design, assumed_vr=0.0))
        adjusted = required_sample_size(design)
        per_endpoint.append((design, unadjusted, adjusted))

    # Co-primary rule: the overall size is driven by the most demanding endpoint.
    overall = max((entry[2] for entry in per_endpoint), key=lambda s: s.n_total)
    payload = {
        "overall": {
            "n_treatment": overall.n_treatment,
            "n_control": overall.n_control,
            "n_total": overall.n_total,
            "n_enrolled_total": overall.n_enrolled_total,
        },
        "endpoints": [
            {
                "label": design.endpoint_label,
                "assumed_vr": design.assumed_vr,
                "n_total_unadjusted": unadjusted.n_total,
                "n_total_adjusted": adjusted.n_total,
                "power_at_overall": round(power_at(design, overall), 6),
                "power_at_overall_zero_vr": round(
                    power_at(replace(design, assumed_vr=0.0), overall), 6
                ),
            }
            for design, unadjusted, adjusted in per_endpoint
        ],
    }
    _atomic_write(config.out / "design.json", _json_bytes(payload))
    _write_manifest(config, {str(config.config): file_digest(config.config)}, ["design.json"])
    return 0


def _load_cohort_entries(config_path: Path) -> list[dict]:
    data = _load_toml(config_path)
    entries = data.get("cohort", [])
    if not entries:
        raise DataFormatError(f"{config_path} defines no [[cohort]] tables")
    base = config_path.parent
    for entry in entries:
        entry["resolved_path"] = base / _require(entry, "path", "[[cohort]]")
    return entries


def _evaluate_entries(entries: list[dict]):
    results = []
    relevance = {}
    digests = {}
    for entry in entries:
        cohort = load_cohort_csv(entry["resolved_path"], cohort_id=_require(entry, "id", "[[cohort]]"))
        digests[str(entry["resolved_path"])] = cohort.source_digest
        relevance[cohort.cohort_id] = RelevanceGrade(
            level=entry.get("relevance", "medium"),
            rationale=entry.get("relevance_rationale", ""),
        )
        covariates = entry.get("standard_covariates", [])
        for endpoint, timepoint in _require(entry, "cells", "[[cohort]]"):
            results.append(evaluate_cohort(cohort, str(endpoint), str(timepoint), covariates))
    return results, relevance, digests


def _evaluation_csv(results) -> bytes:
    lines = ["cohort_id,endpoint,timepoint,n,vr_standard,vr_full,vr_incremental"]
    for r in results:
        lines.append(
            f"{r.cohort_id},{r.endpoint},{r.timepoint},{r.n_evaluable},"
            f"{100.0 * r.vr_standard:.1f},{100.0 * r.vr_full:.1f},{100.0 * r.vr_incremental:.1f}"
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def _cmd_evaluate(config: RunConfig) -> int:
    entries = _load_cohort_entries(config.config)
    results, _, digests = _evaluate_entries(entries)
    _atomic_write(config.out / "evaluation.csv", _evaluation_csv(results))
    inputs = {str(config.config): file_digest(config.config), **digests}
    _write_manifest(config, inputs, ["evaluation.csv"])
    return 0


def _cmd_simulate(config: RunConfig) -> int:
    data = _load_toml(config.config)
    design = _design_from_config(data.get("design", {}), {})
    truth = _require(data, "truth", "scenario config")
    spec = ScenarioSpec(
        design=design,
        true_effect=_require(truth, "effect", "[truth]"),
        true_sd=_require(truth, "sd", "[truth]"),
        true_score_correlation=truth.get("score_correlation", 0.0),
        true_dropout=truth.get("dropout", 0.0),
    )
    if "sizes" in data:
        sizes_cfg = data["sizes"]
        n_t = _require(sizes_cfg, "n_treatment", "[sizes]")
        n_c = _require(sizes_cfg, "n_control", "[sizes]")
        enrolled = sizes_cfg.get("n_enrolled_total", None)
        sizes = ArmSizes(
            n_treatment=n_t,
            n_control=n_c,
            n_total=n_t + n_c,
            n_enrolled_total=enrolled if enrolled is not None else n_t + n_c,
        )
    else:
        sizes = required_sample_size(design)

    analysis = data.get("analysis", {})
    adjustment = Adjustment(
        include_score=analysis.get("adjust_score", True),
        standard_covariates=tuple(analysis.get("standard_covariates", ())),
    )
    reps = config.reps if config.reps is not None else data.get("monte_carlo", {}).get(
        "replications", 2000
    )
    workers_env = os.environ.get("PROCOVA_WORKERS")
    workers = int(workers_env) if workers_env else None

    if "ssr" in data:
        ssr = data["ssr"]
        plan = SsrPlan(
            interim_fraction=_require(ssr, "interim_fraction", "[ssr]"),
            max_n_total=_require(ssr, "max_n_total", "[ssr]"),
            reestimation_targets=tuple(ssr.get("targets", ("variance", "vr"))),
            increase_only=ssr.get("increase_only", True),
            debias_sd=ssr.get("debias_sd", False),
        )
        report = simulate_with_ssr(spec, sizes, plan, reps, config.seed,
                                   adjustment=adjustment, workers=workers)
    else:
        report = run_monte_carlo(spec, sizes, adjustment, reps, config.seed, workers=workers)

    _atomic_write(config.out / "simulation.json", _json_bytes(report.to_json_dict()))
    _write_manifest(
        config, {str(config.config): file_digest(config.config)}, ["simulation.json"]
    )
    return 0


def _cmd_curves(config: RunConfig) -> int:
    designs = _load_designs(config.config)
    if config.endpoint is not None:
        matching = [d for d in designs if d.endpoint_label == config.endpoint]
        if not matching:
            raise DataFormatError(f"no endpoint labelled {config.endpoint!r} in the config")
        design = matching[0]
    else:
        design = designs[0]

    outputs = []
    if config.n_range is not None:
        vr_values = config.vr_values or (0.0, design.assumed_vr)
        start, stop, step = config.n_range
        totals = list(range(start, stop + 1, step))
        curve = power_curve(design, vr_values, totals)
        header = "n," + ",".join(f"power_vr_{vr:g}" for vr in curve.vr_values)
        lines = [header]
        for j, total in enumerate(curve.totals):
            row = ",".join(f"{curve.powers[i][j]:.6f}" for i in range(len(curve.vr_values)))
            lines.append(f"{total},{row}")
        _atomic_write(config.out / "power_curves.csv", ("\n".join(lines) + "\n").encode())
        outputs.append("power_curves.csv")

    if config.fractions is not None:
        start, stop, step = config.fractions
        count = int(round((stop - start) / step)) + 1
        fractions = [round(start + i * step, 10) for i in range(count)]
        powers = config.design_powers or (design.target_power,)
        header = "fraction," + ",".join(f"power_design_{p:g}" for p in powers)
        lines = [header]
        for fraction in fractions:
            row = ",".join(
                f"{power_vs_effective_fraction(fraction, p, design.alpha):.6f}" for p in powers
            )
            lines.append(f"{fraction:.6f},{row}")
        _atomic_write(config.out / "fraction_curve.csv", ("\n".join(lines) + "\n").encode())
        outputs.append("fraction_curve.csv")

    _write_manifest(config, {str(config.config): file_digest(config.config)}, outputs)
    return 0


def _cmd_report(config: RunConfig) -> int:
    data = _load_toml(config.config)
    question = _require(data, "question_of_interest", "report config")
    context = _require(data, "context_of_use", "report config")

    entries = _load_cohort_entries(config.config)
    results, relevance, digests = _evaluate_entries(entries)

    design_entries = []
    for block in data.get("design", []):
        design = _design_from_config({}, block)
        strategy = _strategy_from_string(block.get("strategy", "maintain_ratio"))
        sizes_before = required_sample_size(replace(design, assumed_vr=0.0))
        sizes_after = apply_reduction(design, strategy)
        design_entries.append(
            DesignEntry(
                endpoint=design.endpoint_label,
                design=design,
                strategy=strategy,
                sizes_before=sizes_before,
                sizes_after=sizes_after,
            )
        )
    if not design_entries:
        raise DataFormatError("report config needs at least one [[design]] table")

    risk_cfg = _require(data, "risk", "report config")
    risk_endpoint = risk_cfg.get("endpoint", design_entries[0].endpoint)
    risk_entry = next(
        (e for e in design_entries if e.endpoint == risk_endpoint), design_entries[0]
    )
    risk_table = risk_quantification(
        risk_entry.design,
        risk_entry.sizes_after,
        _require(risk_cfg, "vr_floors", "[risk]"),
        meaningfulness_note=risk_cfg.get("meaningfulness_note", ""),
    )

    mitigations = [
        MitigationItem(
            kind=MitigationKind(_require(m, "kind", "[[mitigation]]")),
            description=_require(m, "description", "[[mitigation]]"),
            quantitative_benefit=m.get("quantitative_benefit", ""),
            conservative_factor=m.get("conservative_factor"),
        )
        for m in data.get("mitigation", [])
    ]

    tol_cfg = _require(data, "tolerance", "report config")
    tolerance = RiskTolerance(
        min_acceptable_floor_power=_require(tol_cfg, "min_acceptable_floor_power", "[tolerance]"),
        min_meaningful_reduction=_require(tol_cfg, "min_meaningful_reduction", "[tolerance]"),
    )
    rec_cfg = data.get("recommendation", {})
    recommendation = recommend_reduction(
        results,
        risk_entry.design,
        tolerance,
        candidate_vrs=rec_cfg.get("candidate_vrs"),
        mitigations=mitigations,
    )

    seeds = {"master": config.seed} if config.seed is not None else {}
    inputs = {str(config.config): file_digest(config.config), **digests}
    provenance = Provenance(tool_version=__version__, seeds=seeds, input_digests=inputs)

    report = assemble_report(
        question_of_interest=question,
        context_of_use=context,
        designs=design_entries,
        evaluation_results=results,
        relevance=relevance,
        risk_table=risk_table,
        mitigations=mitigations,
        recommendation=recommendation,
        provenance=provenance,
    )
    _atomic_write(config.out / "report.json", render(report, "json"))
    _atomic_write(config.out / "report.md", render(report, "markdown"))
    _write_manifest(config, inputs, ["report.json", "report.md"])
    return 0


_DISPATCH = {
    "design": _cmd_design,
    "evaluate": _cmd_evaluate,
    "simulate": _cmd_simulate,
    "curves": _cmd_curves,
    "report": _cmd_report,
}


def run(config: RunConfig) -> int:
    """Dispatch a parsed invocation; returns the process exit code."""
    try:
        return _DISPATCH[config.subcommand](config)
    except DataFormatError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except ProcovaError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(parse_args(sys.argv[1:])))
