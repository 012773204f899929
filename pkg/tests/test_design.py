from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procova.design import (
    ArmSizes,
    FixedFactor,
    Percentile,
    ReductionKind,
    ReductionStrategy,
    TrialDesign,
    apply_reduction,
    calibrated_effect_size,
    conservative_vr,
    effective_sample_size,
    power_at,
    power_curve,
    power_vs_effective_fraction,
    required_sample_size,
    split_total,
)
from procova.errors import DomainError, InfeasibleReductionError


def sizes_1to1(total: int) -> ArmSizes:
    half = total // 2
    return ArmSizes(half, total - half, total, total)


designs = st.builds(
    TrialDesign,
    alpha=st.floats(min_value=0.01, max_value=0.10),
    target_power=st.floats(min_value=0.70, max_value=0.95),
    effect_size=st.floats(min_value=0.1, max_value=1.0),
    endpoint_sd=st.floats(min_value=0.5, max_value=5.0),
    allocation_ratio=st.sampled_from([(1, 1), (2, 1), (3, 2)]),
    dropout_rate=st.floats(min_value=0.0, max_value=0.4),
    assumed_vr=st.floats(min_value=0.0, max_value=0.5),
)


class TestRequiredSampleSize:
    def test_calibrated_anchors(self, ad_design):
        assert required_sample_size(replace(ad_design, assumed_vr=0.0)).n_total == 1000
        assert required_sample_size(ad_design).n_total == 900
        assert required_sample_size(replace(ad_design, assumed_vr=0.15)).n_total == 850

    def test_dropout_inflation(self, ad_design):
        sizes = required_sample_size(replace(ad_design, dropout_rate=0.1))
        assert sizes.n_total == 900
        assert sizes.n_enrolled_total == 1000

    @given(designs)
    @settings(max_examples=60)
    def test_meets_target_and_is_minimal(self, design):
        sizes = required_sample_size(design)
        assert power_at(design, sizes) >= design.target_power - 1e-9
        t, c = design.allocation_ratio
        k = sizes.n_treatment // t
        if (k - 1) * t >= 2 and (k - 1) * c >= 2:
            smaller = ArmSizes(
                (k - 1) * t, (k - 1) * c, (k - 1) * (t + c), (k - 1) * (t + c)
            )
            assert power_at(design, smaller) < design.target_power

    @given(designs, st.floats(min_value=0.0, max_value=0.4))
    @settings(max_examples=40)
    def test_monotone_in_vr(self, design, other_vr):
        lo, hi = sorted((design.assumed_vr, other_vr))
        n_lo = required_sample_size(replace(design, assumed_vr=lo)).n_total
        n_hi = required_sample_size(replace(design, assumed_vr=hi)).n_total
        assert n_hi <= n_lo

    @given(designs, st.floats(min_value=1.01, max_value=3.0))
    @settings(max_examples=40)
    def test_monotone_in_sd_and_effect(self, design, factor):
        base = required_sample_size(design).n_total
        assert required_sample_size(replace(design, endpoint_sd=design.endpoint_sd * factor)).n_total >= base
        assert required_sample_size(replace(design, effect_size=design.effect_size * factor)).n_total <= base

    @given(designs)
    @settings(max_examples=40)
    def test_dropout_inflation_bounds(self, design):
        sizes = required_sample_size(design)
        d = design.dropout_rate
        assert sizes.n_enrolled_total * (1.0 - d) >= sizes.n_total - 1e-9
        assert sizes.n_total > (sizes.n_enrolled_total - 1) * (1.0 - d) - 1e-9


class TestPowerAt:
    def test_full_size_with_vr_gains_power(self, ad_design):
        power = power_at(replace(ad_design, assumed_vr=0.15), sizes_1to1(1000))
        assert power == pytest.approx(0.940, abs=0.005)

    def test_floor_power_at_reduced_size(self, ad_design):
        power = power_at(replace(ad_design, assumed_vr=0.0), sizes_1to1(900))
        assert power == pytest.approx(0.868, abs=0.001)

    @given(designs)
    @settings(max_examples=40)
    def test_self_consistency(self, design):
        assert power_at(design, required_sample_size(design)) >= design.target_power - 1e-9

    def test_noncentral_t_refinement(self, ad_design):
        sizes = sizes_1to1(900)
        z_power = power_at(ad_design, sizes)
        t_power = power_at(ad_design, sizes, use_t=True)
        assert t_power < z_power  # t tails are heavier
        assert t_power == pytest.approx(z_power, abs=0.002)


class TestApplyReduction:
    def test_control_arm_only_anchor(self, ad_design):
        sizes = apply_reduction(ad_design, ReductionStrategy(ReductionKind.CONTROL_ARM_ONLY))
        assert sizes.n_treatment == 500
        assert sizes.n_control == 410
        reduction_pct = 100.0 * (500 - sizes.n_control) / 500
        assert reduction_pct == pytest.approx(18.0, abs=0.5)

    def test_zero_vr_leaves_sizes_unchanged(self, ad_design):
        base = required_sample_size(replace(ad_design, assumed_vr=0.0))
        for kind in ReductionKind:
            sizes = apply_reduction(replace(ad_design, assumed_vr=0.0), ReductionStrategy(kind))
            assert (sizes.n_treatment, sizes.n_control) == (base.n_treatment, base.n_control)

    def test_partial_realization_lands_between(self, ad_design):
        design = replace(ad_design, assumed_vr=0.15)
        strategy = ReductionStrategy(ReductionKind.PARTIAL_REALIZATION, realized_fraction=1.0 / 3.0)
        sizes = apply_reduction(design, strategy)
        assert sizes.n_total == 950
        power = power_at(design, sizes)
        assert 0.90 < power < 0.94

    def test_partial_realization_endpoints(self, ad_design):
        design = replace(ad_design, assumed_vr=0.15)
        assert apply_reduction(design, ReductionStrategy(ReductionKind.PARTIAL_REALIZATION, 0.0)).n_total == 1000
        assert apply_reduction(design, ReductionStrategy(ReductionKind.PARTIAL_REALIZATION, 1.0)).n_total == 850

    def test_control_arm_only_preserves_unadjusted_se(self, ad_design):
        # SE with the covariate at reduced control arm <= unadjusted SE before,
        # with equality within one participant of control-arm rounding.
        design = ad_design
        sizes = apply_reduction(design, ReductionStrategy(ReductionKind.CONTROL_ARM_ONLY))
        vr = design.assumed_vr
        se_new_sq = (1.0 - vr) * (1.0 / sizes.n_treatment + 1.0 / sizes.n_control)
        se_old_sq = 1.0 / 500 + 1.0 / 500
        se_new_sq_minus_one = (1.0 - vr) * (1.0 / sizes.n_treatment + 1.0 / (sizes.n_control - 1))
        assert se_new_sq <= se_old_sq + 1e-15
        assert se_new_sq_minus_one > se_old_sq

    def test_infeasible_control_arm_only(self):
        design = TrialDesign(
            alpha=0.05,
            target_power=0.90,
            effect_size=calibrated_effect_size(4, endpoint_sd=1.0),
            endpoint_sd=1.0,
            assumed_vr=0.6,
        )
        with pytest.raises(InfeasibleReductionError):
            apply_reduction(design, ReductionStrategy(ReductionKind.CONTROL_ARM_ONLY))


class TestEffectiveSampleSize:
    def test_observed_equals_assumed(self, ad_design):
        sizes = required_sample_size(ad_design)
        report = effective_sample_size(ad_design, ad_design.endpoint_sd, 0.10, 0.0, sizes)
        assert report.information_fraction == pytest.approx(1.0, abs=1e-12)
        assert report.achieved_power == pytest.approx(0.90, abs=1e-6)
        assert report.n_eff_required == sizes.n_total

    def test_zero_vr_floor(self, ad_design):
        sizes = required_sample_size(ad_design)  # 900
        report = effective_sample_size(ad_design, ad_design.endpoint_sd, 0.0, 0.0, sizes)
        assert report.achieved_power == pytest.approx(0.868, abs=0.001)
        assert report.n_eff_required == 1000

    def test_sd_inflation_matches_fraction_curve(self, ad_design):
        sizes = required_sample_size(ad_design)
        report = effective_sample_size(ad_design, 1.05 * ad_design.endpoint_sd, 0.10, 0.0, sizes)
        assert report.information_fraction == pytest.approx(1.0 / 1.1025, rel=1e-12)
        via_curve = power_vs_effective_fraction(
            report.information_fraction, ad_design.target_power, ad_design.alpha
        )
        assert report.achieved_power == pytest.approx(via_curve, abs=1e-12)


class TestPowerVsEffectiveFraction:
    def test_published_anchors(self):
        assert power_vs_effective_fraction(0.9, 0.80, 0.05) == pytest.approx(0.757, abs=0.001)
        assert power_vs_effective_fraction(0.9, 0.90, 0.05) == pytest.approx(0.868, abs=0.001)

    def test_fraction_one_returns_design_power(self):
        assert power_vs_effective_fraction(1.0, 0.90, 0.05) == pytest.approx(0.90, abs=1e-12)

    @given(
        st.floats(min_value=0.05, max_value=3.0),
        st.floats(min_value=0.05, max_value=3.0),
        st.floats(min_value=0.5, max_value=0.95),
    )
    def test_strictly_increasing(self, f1, f2, p):
        lo, hi = sorted((f1, f2))
        if hi - lo > 1e-9:
            assert power_vs_effective_fraction(lo, p, 0.05) < power_vs_effective_fraction(hi, p, 0.05)


class TestPowerCurve:
    def test_figure_anchors(self, ad_design):
        curve = power_curve(ad_design, [0.0, 0.15], range(500, 1501, 10))
        assert curve.series(0.0)[1000] == pytest.approx(0.90, abs=0.005)
        assert curve.series(0.15)[850] == pytest.approx(0.90, abs=0.005)
        assert curve.series(0.15)[1000] == pytest.approx(0.94, abs=0.005)

    def test_monotone_in_n_and_vr(self, ad_design):
        curve = power_curve(ad_design, [0.0, 0.15], range(500, 1001, 7))
        for row in curve.powers:
            assert all(a <= b + 1e-12 for a, b in zip(row, row[1:]))
        assert all(
            lo < hi for lo, hi in zip(curve.powers[0], curve.powers[1])
        )

    def test_pointwise_equals_power_at(self, ad_design):
        totals = [511, 774, 1000]
        curve = power_curve(ad_design, [0.07], totals)
        for j, total in enumerate(totals):
            n_t, n_c = split_total(total, ad_design.allocation_ratio)
            direct = power_at(
                replace(ad_design, assumed_vr=0.07), ArmSizes(n_t, n_c, total, total)
            )
            assert curve.powers[0][j] == direct

    def test_empty_grid_rejected(self, ad_design):
        with pytest.raises(DomainError):
            power_curve(ad_design, [0.1], [])


class TestConservativeVr:
    def test_fixed_factor_anchor(self):
        assert conservative_vr(0.159, FixedFactor(0.9)) == pytest.approx(0.1431, abs=1e-12)

    def test_identity_factor(self):
        assert conservative_vr(0.25, FixedFactor(1.0)) == 0.25

    def test_percentile_linear_interpolation(self):
        dist = (0.05, 0.10, 0.15, 0.20, 0.25)
        # manual linear-interpolation oracle: position (n-1)*p/100 = 0.8
        oracle = 0.05 + 0.8 * (0.10 - 0.05)
        assert conservative_vr(0.5, Percentile(20, dist)) == pytest.approx(oracle, abs=1e-12)
        assert oracle == pytest.approx(0.09, abs=1e-12)

    def test_percentile_clamped_to_point(self):
        assert conservative_vr(0.08, Percentile(80, (0.2, 0.3, 0.4))) == 0.08
        assert conservative_vr(0.08, Percentile(20, (-0.5, -0.2, -0.1))) == 0.0

    def test_empty_distribution(self):
        with pytest.raises(DomainError):
            Percentile(20, ())


class TestValidation:
    def test_design_invariants(self):
        with pytest.raises(DomainError):
            TrialDesign(alpha=0.05, target_power=0.04, effect_size=1.0, endpoint_sd=1.0)
        with pytest.raises(DomainError):
            TrialDesign(alpha=0.05, target_power=0.9, effect_size=0.0, endpoint_sd=1.0)
        with pytest.raises(DomainError):
            TrialDesign(alpha=0.05, target_power=0.9, effect_size=1.0, endpoint_sd=1.0, assumed_vr=1.0)

    def test_allocation_reduced_to_lowest_terms(self):
        design = TrialDesign(
            alpha=0.05, target_power=0.9, effect_size=1.0, endpoint_sd=1.0, allocation_ratio=(4, 2)
        )
        assert design.allocation_ratio == (2, 1)

    def test_arm_sizes_invariants(self):
        with pytest.raises(DomainError):
            ArmSizes(1, 2, 3, 3)
        with pytest.raises(DomainError):
            ArmSizes(2, 2, 5, 5)
        with pytest.raises(DomainError):
            ArmSizes(2, 2, 4, 3)
