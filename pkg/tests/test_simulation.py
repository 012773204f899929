import math
from dataclasses import replace

import numpy as np
import pytest

from procova.cohort import CohortData, Participant
from procova.design import ArmSizes, power_at, required_sample_size
from procova.errors import AnalysisError, DomainError, ReestimationError
from procova.simulation import (
    SIM_TIMEPOINT,
    Adjustment,
    ScenarioSpec,
    SsrPlan,
    StandardCovariateSpec,
    _mc_replicate,
    _rep_rng,
    analyze_trial,
    blinded_reestimate,
    generate_synthetic_cohort,
    run_monte_carlo,
    simulate_with_ssr,
)

SCORE = Adjustment(include_score=True)


@pytest.fixture(scope="module")
def ad_spec(ad_design):
    """Truth exactly matching the design assumptions (rho^2 = assumed VR)."""
    return ScenarioSpec(
        design=ad_design,
        true_effect=ad_design.effect_size,
        true_sd=ad_design.endpoint_sd,
        true_score_correlation=math.sqrt(ad_design.assumed_vr),
    )


@pytest.fixture(scope="module")
def floor_spec(ad_design):
    """The reduced design when the score carries no prognostic value."""
    return ScenarioSpec(
        design=ad_design,
        true_effect=ad_design.effect_size,
        true_sd=ad_design.endpoint_sd,
        true_score_correlation=0.0,
    )


def outcome_arrays(cohort, endpoint):
    cell = (endpoint, SIM_TIMEPOINT)
    pairs = [(p.scores[cell], p.outcomes[cell]) for p in cohort.participants if cell in p.outcomes]
    s, y = np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
    return s, y


class TestGenerateSyntheticCohort:
    def test_zero_correlation(self, ad_spec):
        spec = replace(ad_spec, true_score_correlation=0.0)
        cohort = generate_synthetic_cohort(spec, ArmSizes(2000, 2000, 4000, 4000), seed=1)
        s, y = outcome_arrays(cohort, spec.design.endpoint_label)
        assert abs(np.corrcoef(s, y)[0, 1]) < 3.0 / math.sqrt(len(s))

    def test_high_correlation_large_n(self, ad_design):
        spec = ScenarioSpec(
            design=ad_design, true_effect=0.0, true_sd=ad_design.endpoint_sd,
            true_score_correlation=0.9,
        )
        cohort = generate_synthetic_cohort(spec, ArmSizes(50000, 50000, 100000, 100000), seed=2)
        s, y = outcome_arrays(cohort, ad_design.endpoint_label)
        assert 0.895 <= np.corrcoef(s, y)[0, 1] <= 0.905

    def test_null_effect_mean_difference(self, ad_design):
        spec = ScenarioSpec(
            design=ad_design, true_effect=0.0, true_sd=ad_design.endpoint_sd,
            true_score_correlation=0.3,
        )
        cohort = generate_synthetic_cohort(spec, ArmSizes(3000, 3000, 6000, 6000), seed=3)
        cell = (ad_design.endpoint_label, SIM_TIMEPOINT)
        treated = [p.outcomes[cell] for p in cohort.participants if p.arm == "treatment"]
        control = [p.outcomes[cell] for p in cohort.participants if p.arm == "control"]
        se = ad_design.endpoint_sd * math.sqrt(1 / len(treated) + 1 / len(control))
        assert abs(np.mean(treated) - np.mean(control)) < 3.0 * se

    def test_dropout_rate_and_flags(self, ad_spec):
        spec = replace(ad_spec, true_dropout=0.2)
        sizes = ArmSizes(1000, 1000, 2000, 2500)
        cohort = generate_synthetic_cohort(spec, sizes, seed=4)
        assert len(cohort) == 2500
        completers = [p for p in cohort.participants if p.is_complete(SIM_TIMEPOINT)]
        assert len(completers) == pytest.approx(2000, abs=3 * math.sqrt(2500 * 0.2 * 0.8))
        dropouts = [p for p in cohort.participants if not p.is_complete(SIM_TIMEPOINT)]
        assert all(not p.outcomes for p in dropouts)
        assert all(p.scores for p in dropouts)  # baseline-derived, always present

    def test_allocation_pattern(self, ad_spec):
        cohort = generate_synthetic_cohort(ad_spec, ArmSizes(100, 100, 200, 200), seed=5)
        arms = [p.arm for p in cohort.participants]
        assert arms.count("treatment") == 100
        assert arms[:4] == ["treatment", "control", "treatment", "control"]

    def test_deterministic(self, ad_spec):
        sizes = ArmSizes(50, 50, 100, 100)
        assert generate_synthetic_cohort(ad_spec, sizes, seed=6) == generate_synthetic_cohort(
            ad_spec, sizes, seed=6
        )

    def test_standard_covariates(self, ad_design):
        spec = ScenarioSpec(
            design=ad_design, true_effect=0.0, true_sd=ad_design.endpoint_sd,
            true_score_correlation=0.3,
            standard_covariate_spec=StandardCovariateSpec(2, (0.6, 0.0)),
        )
        cohort = generate_synthetic_cohort(spec, ArmSizes(5000, 5000, 10000, 10000), seed=7)
        cell = (ad_design.endpoint_label, SIM_TIMEPOINT)
        x1 = np.array([p.baseline["x1"] for p in cohort.participants if cell in p.outcomes])
        _, y = outcome_arrays(cohort, ad_design.endpoint_label)
        assert np.corrcoef(x1, y)[0, 1] == pytest.approx(0.6, abs=0.03)


class TestAnalyzeTrial:
    def test_unadjusted_is_difference_of_completer_means(self):
        cell = ("y", SIM_TIMEPOINT)
        parts = [
            Participant("t1", arm="treatment", scores={cell: 0.0}, outcomes={cell: 3.0}),
            Participant("t2", arm="treatment", scores={cell: 0.0}, outcomes={cell: 5.0}),
            Participant("c1", arm="control", scores={cell: 0.0}, outcomes={cell: 0.0}),
            Participant("c2", arm="control", scores={cell: 0.0}, outcomes={cell: 2.0}),
            Participant("d1", arm="control", scores={cell: 0.0}, outcomes={},
                        completed={SIM_TIMEPOINT: False}),
        ]
        cohort = CohortData(cohort_id="tiny", participants=tuple(parts))
        result = analyze_trial(cohort, "y", SIM_TIMEPOINT)
        assert result.effect_estimate == pytest.approx(3.0, abs=1e-12)
        assert (result.n_treatment, result.n_control) == (2, 2)

    def test_se_ratio_matches_asymptotic_formula(self, ad_design):
        spec = ScenarioSpec(
            design=ad_design, true_effect=0.0, true_sd=ad_design.endpoint_sd,
            true_score_correlation=0.9,
        )
        cohort = generate_synthetic_cohort(spec, ArmSizes(20000, 20000, 40000, 40000), seed=8)
        adj = analyze_trial(cohort, ad_design.endpoint_label, SIM_TIMEPOINT, SCORE)
        unadj = analyze_trial(cohort, ad_design.endpoint_label, SIM_TIMEPOINT)
        assert adj.se / unadj.se == pytest.approx(math.sqrt(1.0 - 0.81), abs=0.02)

    def test_affine_score_invariance(self, ad_spec):
        cohort = generate_synthetic_cohort(ad_spec, ArmSizes(100, 100, 200, 200), seed=9)
        cell = (ad_spec.design.endpoint_label, SIM_TIMEPOINT)
        rescored = CohortData(
            cohort_id="r",
            participants=tuple(
                replace(p, scores={cell: -4.0 * p.scores[cell] + 2.0}) for p in cohort.participants
            ),
        )
        base = analyze_trial(cohort, ad_spec.design.endpoint_label, SIM_TIMEPOINT, SCORE)
        moved = analyze_trial(rescored, ad_spec.design.endpoint_label, SIM_TIMEPOINT, SCORE)
        assert moved.effect_estimate == pytest.approx(base.effect_estimate, rel=1e-9)
        assert moved.se == pytest.approx(base.se, rel=1e-9)

    def test_empty_arm_rejected(self):
        cell = ("y", SIM_TIMEPOINT)
        parts = [
            Participant(f"p{i}", arm="treatment", scores={cell: 0.0}, outcomes={cell: float(i)})
            for i in range(5)
        ]
        cohort = CohortData(cohort_id="onearm", participants=tuple(parts))
        with pytest.raises(AnalysisError):
            analyze_trial(cohort, "y", SIM_TIMEPOINT)

    def test_kernel_matches_public_analysis(self, ad_spec):
        # The Monte Carlo kernel must agree with the cohort-level analysis.
        sizes = ArmSizes(150, 150, 300, 300)
        for rep in range(5):
            reject, se_adj, se_unadj, vr, _ = _mc_replicate(ad_spec, sizes, SCORE, _rep_rng(77, rep))
            cohort = generate_synthetic_cohort(
                ad_spec, sizes, np.random.SeedSequence(77, spawn_key=(rep,))
            )
            adj = analyze_trial(cohort, ad_spec.design.endpoint_label, SIM_TIMEPOINT, SCORE)
            unadj = analyze_trial(cohort, ad_spec.design.endpoint_label, SIM_TIMEPOINT)
            assert se_adj == pytest.approx(adj.se, abs=1e-10)
            assert se_unadj == pytest.approx(unadj.se, abs=1e-10)
            assert reject == (adj.p_value < ad_spec.design.alpha)
            assert vr == pytest.approx(1.0 - (adj.se / unadj.se) ** 2, abs=1e-10)


class TestRunMonteCarlo:
    def test_bit_reproducible_and_worker_invariant(self, ad_spec):
        sizes = ArmSizes(100, 100, 200, 200)
        a = run_monte_carlo(ad_spec, sizes, SCORE, reps=600, seed=42)
        b = run_monte_carlo(ad_spec, sizes, SCORE, reps=600, seed=42)
        c = run_monte_carlo(ad_spec, sizes, SCORE, reps=600, seed=42, workers=3)
        assert a == b == c

    def test_powered_scenario_near_analytic(self, ad_spec, ad_design):
        sizes = required_sample_size(ad_design)
        report = run_monte_carlo(ad_spec, sizes, SCORE, reps=4000, seed=7)
        se = math.sqrt(0.9 * 0.1 / 4000)
        assert report.rejection_rate == pytest.approx(0.90, abs=3 * se)
        assert report.realized_vr_mean == pytest.approx(0.10, abs=0.01)

    def test_adjustment_reduces_se(self, ad_spec):
        report = run_monte_carlo(ad_spec, ArmSizes(200, 200, 400, 400), SCORE, reps=1500, seed=3)
        assert report.mean_se_adjusted < report.mean_se_unadjusted

    def test_seed_recorded(self, ad_spec):
        report = run_monte_carlo(ad_spec, ArmSizes(50, 50, 100, 100), SCORE, reps=200, seed=123)
        assert report.master_seed == 123
        assert report.final_n is None

    def test_reps_validated(self, ad_spec):
        with pytest.raises(DomainError):
            run_monte_carlo(ad_spec, ArmSizes(50, 50, 100, 100), SCORE, reps=0, seed=1)

    @pytest.mark.parametrize("rho", [0.0, 0.3, 0.5, 0.7])
    def test_power_converges_to_analytic_over_rho_grid(self, ad_design, rho):
        design = replace(ad_design, assumed_vr=rho * rho)
        sizes = required_sample_size(design)
        spec = ScenarioSpec(
            design=design,
            true_effect=design.effect_size,
            true_sd=design.endpoint_sd,
            true_score_correlation=rho,
        )
        analytic = power_at(design, sizes)
        report = run_monte_carlo(spec, sizes, SCORE, reps=20000, seed=int(1000 * rho) + 5)
        band = 3.0 * math.sqrt(analytic * (1.0 - analytic) / 20000)
        assert report.rejection_rate == pytest.approx(analytic, abs=band)


class TestBlindedReestimate:
    def test_self_consistency_at_design_truth(self, ad_spec, ad_design):
        interim = generate_synthetic_cohort(
            ad_spec, ArmSizes(20000, 20000, 40000, 40000), seed=11
        ).without_arms()
        estimate = blinded_reestimate(interim, ad_design, debias=True)
        planned = required_sample_size(ad_design)
        assert estimate.n_required_new.n_total == pytest.approx(planned.n_total, abs=30)

    def test_null_prognosis_recovers_unreduced_size(self, floor_spec, ad_design):
        interim = generate_synthetic_cohort(
            floor_spec, ArmSizes(20000, 20000, 40000, 40000), seed=12
        ).without_arms()
        estimate = blinded_reestimate(interim, ad_design, debias=True)
        assert estimate.n_required_new.n_total == pytest.approx(1000, abs=30)
        assert estimate.vr_blinded < 0.01

    def test_debias_subtracts_closed_form_term(self, ad_design):
        spec = ScenarioSpec(
            design=ad_design, true_effect=0.0, true_sd=ad_design.endpoint_sd,
            true_score_correlation=0.3,
        )
        interim = generate_synthetic_cohort(spec, ArmSizes(500, 500, 1000, 1000), seed=13)
        interim = interim.without_arms()
        on = blinded_reestimate(interim, ad_design, debias=True)
        off = blinded_reestimate(interim, ad_design, debias=False)
        term = ad_design.effect_size**2 * 0.25
        assert on.sd_blinded**2 == pytest.approx(off.sd_blinded**2 - term, rel=1e-12)

    def test_dropout_target_inflates_enrollment(self, ad_design):
        design = replace(ad_design, dropout_rate=0.1)  # plans 900 completers, 1000 enrolled
        spec = ScenarioSpec(
            design=design, true_effect=0.0, true_sd=design.endpoint_sd,
            true_score_correlation=math.sqrt(design.assumed_vr), true_dropout=0.2,
        )
        interim = generate_synthetic_cohort(
            spec, ArmSizes(9000, 9000, 18000, 20000), seed=15
        ).without_arms()
        estimate = blinded_reestimate(interim, design, targets=("dropout",))
        assert estimate.dropout_blinded == pytest.approx(0.2, abs=0.01)
        # completer requirement unchanged; enrollment re-inflated for the
        # observed dropout: ceil(900 / 0.8) = 1125
        assert estimate.n_required_new.n_total == 900
        assert estimate.n_required_new.n_enrolled_total == pytest.approx(1125, abs=10)

    def test_degenerate_variance(self, ad_design):
        cell = (ad_design.endpoint_label, SIM_TIMEPOINT)
        parts = tuple(
            Participant(f"p{i}", scores={cell: float(i)}, outcomes={cell: 1.0}) for i in range(30)
        )
        with pytest.raises(ReestimationError):
            blinded_reestimate(CohortData(cohort_id="flat", participants=parts), ad_design)

    def test_minimum_completers(self, ad_spec, ad_design):
        interim = generate_synthetic_cohort(ad_spec, ArmSizes(5, 5, 10, 10), seed=14)
        with pytest.raises(ReestimationError):
            blinded_reestimate(interim.without_arms(), ad_design)


class TestSimulateWithSsr:
    def test_truth_at_design_keeps_planned_n(self, ad_spec, ad_design):
        sizes = required_sample_size(ad_design)  # 900
        plan = SsrPlan(interim_fraction=0.5, max_n_total=1100)
        report = simulate_with_ssr(ad_spec, sizes, plan, reps=1500, seed=21)
        assert report.final_n.median == pytest.approx(sizes.n_total, abs=25)
        assert report.rejection_rate == pytest.approx(0.90, abs=0.03)

    def test_disabled_plan_equals_plain_monte_carlo(self, floor_spec, ad_design):
        sizes = required_sample_size(ad_design)
        plan = SsrPlan(interim_fraction=0.5, max_n_total=sizes.n_enrolled_total)
        with_ssr = simulate_with_ssr(floor_spec, sizes, plan, reps=800, seed=5, adjustment=SCORE)
        without = run_monte_carlo(floor_spec, sizes, SCORE, reps=800, seed=5)
        assert with_ssr.rejection_rate == without.rejection_rate
        assert with_ssr.mean_se_adjusted == without.mean_se_adjusted
        assert with_ssr.mean_se_unadjusted == without.mean_se_unadjusted
        assert with_ssr.realized_vr_mean == without.realized_vr_mean
        assert with_ssr.final_n.minimum == with_ssr.final_n.maximum == sizes.n_enrolled_total

    def test_increase_only_restores_power(self, floor_spec, ad_design):
        sizes = required_sample_size(ad_design)
        plan = SsrPlan(interim_fraction=0.5, max_n_total=1100)
        with_ssr = simulate_with_ssr(floor_spec, sizes, plan, reps=3000, seed=31)
        without = run_monte_carlo(floor_spec, sizes, SCORE, reps=3000, seed=31)
        se = 2.0 * math.sqrt(0.9 * 0.1 / 3000)
        assert with_ssr.rejection_rate >= without.rejection_rate - se
        assert with_ssr.final_n.median > sizes.n_total

    def test_worker_invariance(self, floor_spec, ad_design):
        sizes = required_sample_size(ad_design)
        plan = SsrPlan(interim_fraction=0.5, max_n_total=1100)
        a = simulate_with_ssr(floor_spec, sizes, plan, reps=400, seed=9)
        b = simulate_with_ssr(floor_spec, sizes, plan, reps=400, seed=9, workers=2)
        assert a == b

    def test_ceiling_below_planned_rejected(self, ad_spec, ad_design):
        sizes = required_sample_size(ad_design)
        with pytest.raises(DomainError):
            simulate_with_ssr(
                ad_spec, sizes, SsrPlan(interim_fraction=0.5, max_n_total=100), reps=10, seed=1
            )
