#!/usr/bin/env python3
"""Regenerate the Alzheimer's disease example fixtures under tests/data/.

The four cohorts reproduce the published variance-reduction evaluation of an
AD progression model on held-out trials: each (endpoint, timepoint) cell is a
synthetic score/outcome pair constructed with that exact sample correlation,
so re-running the evaluation recovers the published percentages verbatim.
Everything is seeded; committed fixtures and regenerated ones are identical.
"""

from __future__ import annotations

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from procova.cohort import CorrelatedCell, synthetic_correlated_cohort, write_cohort_csv
from procova.design import calibrated_effect_size

DATA_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"

CDR = "CDR-SB"
ADAS14 = "ADAS-Cog 14"
ADAS11 = "ADAS-Cog 11"

# cohort id -> (n, seed, per-cell variance reductions)
AD_COHORTS = {
    "Phase 2": (
        453,
        101,
        [
            (CDR, "12", 0.161, None),
            (CDR, "18", 0.159, None),
            (CDR, "24", 0.130, None),
            (ADAS14, "12", 0.085, None),
            (ADAS14, "18", 0.045, None),
            (ADAS14, "24", 0.093, None),
        ],
    ),
    "Study A control": (
        116,
        102,
        [
            (CDR, "12", 0.138, None),
            (CDR, "18", 0.140, None),
            (CDR, "24", 0.130, None),
            (ADAS11, "12", 0.043, 93),
            (ADAS11, "18", 0.018, 93),
            (ADAS11, "24", 0.052, 93),
        ],
    ),
    "Study B control": (
        136,
        103,
        [
            (CDR, "12", 0.085, None),
            (CDR, "18", 0.095, None),
            (ADAS11, "12", 0.103, 132),
            (ADAS11, "18", 0.124, 132),
        ],
    ),
    "Study C control": (
        46,
        104,
        [
            (CDR, "12", 0.211, None),
            (ADAS11, "12", 0.309, None),
        ],
    ),
}

FILENAMES = {
    "Phase 2": "phase2.csv",
    "Study A control": "study_a.csv",
    "Study B control": "study_b.csv",
    "Study C control": "study_c.csv",
}

# Plausible change-score location/scale per endpoint (units only; the
# correlations are what the fixtures pin down).
SCALES = {
    CDR: (1.5, 2.0, 1.4, 1.0),     # outcome mean/sd, score mean/sd
    ADAS14: (3.0, 6.0, 2.8, 3.0),
    ADAS11: (3.0, 6.0, 2.8, 3.0),
}

SD_CDR = 3.5
SD_ADAS = 6.0
TOTAL_UNADJUSTED = 1000


def make_cohorts() -> None:
    for cohort_id, (n, seed, cell_specs) in AD_COHORTS.items():
        cells = []
        for endpoint, timepoint, vr, n_present in cell_specs:
            out_loc, out_scale, score_loc, score_scale = SCALES[endpoint]
            cells.append(
                CorrelatedCell(
                    endpoint=endpoint,
                    timepoint=timepoint,
                    r=math.sqrt(vr),
                    n_present=n_present,
                    score_location=score_loc,
                    score_scale=score_scale,
                    outcome_location=out_loc,
                    outcome_scale=out_scale,
                )
            )
        cohort = synthetic_correlated_cohort(
            cohort_id, n, cells, seed=seed, baseline_features=("age",)
        )
        write_cohort_csv(cohort, DATA_DIR / FILENAMES[cohort_id])


def make_design_config() -> None:
    delta_cdr = calibrated_effect_size(TOTAL_UNADJUSTED, endpoint_sd=SD_CDR)
    delta_adas = calibrated_effect_size(TOTAL_UNADJUSTED, endpoint_sd=SD_ADAS)
    text = f"""# Phase 3 AD design: co-primary endpoints, 1:1, 90% power at 1000 unadjusted.
[design]
alpha = 0.05
target_power = 0.90
allocation_ratio = [1, 1]
dropout_rate = 0.0

[[endpoint]]
label = "{CDR}"
endpoint_sd = {SD_CDR}
effect_size = {delta_cdr!r}
assumed_vr = 0.10

[[endpoint]]
label = "{ADAS14}"
endpoint_sd = {SD_ADAS}
effect_size = {delta_adas!r}
assumed_vr = 0.10
"""
    (DATA_DIR / "ad_design.toml").write_text(text)


def make_report_config() -> None:
    delta_cdr = calibrated_effect_size(TOTAL_UNADJUSTED, endpoint_sd=SD_CDR)
    delta_adas = calibrated_effect_size(TOTAL_UNADJUSTED, endpoint_sd=SD_ADAS)

    def cells_toml(cohort_id: str) -> str:
        rows = AD_COHORTS[cohort_id][2]
        return ", ".join(f'["{ep}", "{tp}"]' for ep, tp, _, _ in rows)

    text = f"""question_of_interest = "Does the planned phase 3 design keep adequate power for its co-primary endpoints at a reduced sample size once the prognostic score enters the analysis?"
context_of_use = "A prognostic model predicts each participant's control outcome from baseline data; the prediction is used as a covariate in the primary analysis and the expected precision gain is taken as a smaller required sample size."

[[design]]
label = "{CDR}"
alpha = 0.05
target_power = 0.90
allocation_ratio = [1, 1]
dropout_rate = 0.0
endpoint_sd = {SD_CDR}
effect_size = {delta_cdr!r}
assumed_vr = 0.10
strategy = "maintain_ratio"

[[design]]
label = "{ADAS14}"
alpha = 0.05
target_power = 0.90
allocation_ratio = [1, 1]
dropout_rate = 0.0
endpoint_sd = {SD_ADAS}
effect_size = {delta_adas!r}
assumed_vr = 0.10
strategy = "maintain_ratio"

[[cohort]]
id = "Phase 2"
path = "phase2.csv"
relevance = "high"
relevance_rationale = "early AD population matching the planned trial; most recent study"
cells = [{cells_toml("Phase 2")}]

[[cohort]]
id = "Study A control"
path = "study_a.csv"
relevance = "medium"
relevance_rationale = "mild-to-moderate population, more severe than planned"
cells = [{cells_toml("Study A control")}]

[[cohort]]
id = "Study B control"
path = "study_b.csv"
relevance = "medium"
relevance_rationale = "mild-to-moderate population; 18-month duration"
cells = [{cells_toml("Study B control")}]

[[cohort]]
id = "Study C control"
path = "study_c.csv"
relevance = "low"
relevance_rationale = "small 12-month study in a more severe population"
cells = [{cells_toml("Study C control")}]

[risk]
endpoint = "{CDR}"
vr_floors = [0.0, 0.05, 0.10]
meaningfulness_note = "A reduction of 100 participants materially shortens enrollment; anything under 50 would not justify the added complexity."

[tolerance]
min_acceptable_floor_power = 0.86
min_meaningful_reduction = 50

[recommendation]
candidate_vrs = [0.05, 0.10, 0.15]

[[mitigation]]
kind = "blinded_ssr"
description = "Blinded sample-size re-estimation at the 50% interim with an enrollment ceiling of 1100."
quantitative_benefit = "Simulation with zero prognostic benefit restores power to about 0.90 with a median final enrollment near 1000."

[[mitigation]]
kind = "standard_covariate_protection"
description = "Target power refers to the unadjusted analysis; baseline covariates carry little prognostic value in these cohorts, so no extra protection is claimed."
"""
    (DATA_DIR / "ad_report.toml").write_text(text)


def make_scenario_configs() -> None:
    delta_cdr = calibrated_effect_size(TOTAL_UNADJUSTED, endpoint_sd=SD_CDR)
    design_block = f"""[design]
alpha = 0.05
target_power = 0.90
allocation_ratio = [1, 1]
dropout_rate = 0.0
endpoint_label = "{CDR}"
endpoint_sd = {SD_CDR}
effect_size = {delta_cdr!r}
assumed_vr = 0.10
"""
    (DATA_DIR / "scenario_null.toml").write_text(
        design_block
        + f"""
[truth]
effect = 0.0
sd = {SD_CDR}
score_correlation = 0.3
dropout = 0.0

[analysis]
adjust_score = true

[monte_carlo]
replications = 1000
"""
    )
    (DATA_DIR / "scenario_ad_floor.toml").write_text(
        design_block
        + f"""
# 900-participant reduced design when the score turns out worthless.
[truth]
effect = {delta_cdr!r}
sd = {SD_CDR}
score_correlation = 0.0
dropout = 0.0

[analysis]
adjust_score = true

[monte_carlo]
replications = 1000
"""
    )
    (DATA_DIR / "scenario_ssr.toml").write_text(
        design_block
        + f"""
[truth]
effect = {delta_cdr!r}
sd = {SD_CDR}
score_correlation = 0.0
dropout = 0.0

[analysis]
adjust_score = true

[ssr]
interim_fraction = 0.5
max_n_total = 1100

[monte_carlo]
replications = 1000
"""
    )


def main() -> None:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    make_cohorts()
    make_design_config()
    make_report_config()
    make_scenario_configs()
    print(f"fixtures written to {DATA_DIR}")


if __name__ == "__main__":
    main()
