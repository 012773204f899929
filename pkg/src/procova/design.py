"""Power and sample-size engine for two-arm trials with a continuous endpoint.

The analysis model is the two-sided normal-approximation z-test on the
treatment-effect estimate, with the squared standard error shrunk by the
variance reduction (VR) expected from prognostic covariate adjustment:

    SE^2 = sigma^2 * (1 - VR) * (1/n_t + 1/n_c)
    power = Phi(|delta| / SE - z_{1 - alpha/2})

Arm sizes always refer to completers; enrollment is inflated for dropout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.stats

from .errors import DomainError, InfeasibleReductionError
from .stats import normal_cdf, normal_quantile

# Ceiling guard: float noise at an exact integer boundary must not push a
# calibrated design up a whole allocation granule.
_CEIL_GUARD = 1e-9


def _guarded_ceil(x: float) -> int:
    return int(math.ceil(x - _CEIL_GUARD))


@dataclass(frozen=True)
class TrialDesign:
    """Planning assumptions for one endpoint of a two-arm trial."""

    alpha: float
    target_power: float
    effect_size: float
    endpoint_sd: float
    allocation_ratio: tuple[int, int] = (1, 1)
    dropout_rate: float = 0.0
    assumed_vr: float = 0.0
    endpoint_label: str = "endpoint"

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must be in (0, 1), got {self.alpha}")
        if not (0.0 < self.target_power < 1.0):
            raise DomainError(f"target_power must be in (0, 1), got {self.target_power}")
        if self.target_power <= self.alpha:
            raise DomainError("target_power must exceed alpha")
        if not (math.isfinite(self.effect_size) and self.effect_size != 0.0):
            raise DomainError("effect_size must be finite and nonzero")
        if not (self.endpoint_sd > 0.0 and math.isfinite(self.endpoint_sd)):
            raise DomainError("endpoint_sd must be a positive finite number")
        t, c = self.allocation_ratio
        if int(t) != t or int(c) != c or t < 1 or c < 1:
            raise DomainError("allocation_ratio must be a pair of positive integers")
        g = math.gcd(int(t), int(c))
        object.__setattr__(self, "allocation_ratio", (int(t) // g, int(c) // g))
        if not (0.0 <= self.dropout_rate < 1.0):
            raise DomainError("dropout_rate must be in [0, 1)")
        if not (0.0 <= self.assumed_vr < 1.0):
            raise DomainError("assumed_vr must be in [0, 1)")


@dataclass(frozen=True)
class ArmSizes:
    """Completer counts per arm plus the dropout-inflated enrollment total."""

    n_treatment: int
    n_control: int
    n_total: int
    n_enrolled_total: int

    def __post_init__(self):
        if self.n_treatment < 2 or self.n_control < 2:
            raise DomainError("each arm needs at least 2 participants")
        if self.n_total != self.n_treatment + self.n_control:
            raise DomainError("n_total must equal n_treatment + n_control")
        if self.n_enrolled_total < self.n_total:
            raise DomainError("enrollment cannot be below the completer total")


class ReductionKind(Enum):
    MAINTAIN_RATIO = "maintain_ratio"
    CONTROL_ARM_ONLY = "control_arm_only"
    PARTIAL_REALIZATION = "partial_realization"


@dataclass(frozen=True)
class ReductionStrategy:
    """How the precision gain is converted into a smaller trial.

    ``realized_fraction`` applies to PARTIAL_REALIZATION only: the share of
    the benefit taken as sample-size reduction, the rest kept as power gain.
    """

    kind: ReductionKind
    realized_fraction: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.realized_fraction <= 1.0):
            raise DomainError("realized_fraction must be in [0, 1]")


@dataclass(frozen=True)
class EffectiveSampleSizeReport:
    """How much of the designed information a trial actually delivered."""

    n_actual: int
    n_eff_required: int
    information_fraction: float
    achieved_power: float


def _arm_sizes(n_treatment: int, n_control: int, dropout_rate: float) -> ArmSizes:
    n_total = n_treatment + n_control
    enrolled = _guarded_ceil(n_total / (1.0 - dropout_rate))
    return ArmSizes(n_treatment, n_control, n_total, max(enrolled, n_total))


def _z_pair(alpha: float, power: float) -> tuple[float, float]:
    return normal_quantile(1.0 - alpha / 2.0), normal_quantile(power)


def _power(design: TrialDesign, n_t: float, n_c: float, vr: float) -> float:
    se = design.endpoint_sd * math.sqrt((1.0 - vr) * (1.0 / n_t + 1.0 / n_c))
    z_alpha = normal_quantile(1.0 - design.alpha / 2.0)
    return normal_cdf(abs(design.effect_size) / se - z_alpha)


def required_sample_size(design: TrialDesign) -> ArmSizes:
    """Smallest arm sizes on the allocation grid reaching the target power."""
    t, c = design.allocation_ratio
    z_alpha, z_power = _z_pair(design.alpha, design.target_power)
    k_cont = (
        design.endpoint_sd**2
        * (1.0 - design.assumed_vr)
        * (1.0 / t + 1.0 / c)
        * (z_alpha + z_power) ** 2
        / design.effect_size**2
    )
    k = max(_guarded_ceil(k_cont), _guarded_ceil(2.0 / t), _guarded_ceil(2.0 / c), 1)
    # The ceiling guard can land one granule short in pathological cases;
    # walk up until the analytic power actually meets the target.
    while _power(design, t * k, c * k, design.assumed_vr) < design.target_power - 1e-12:
        k += 1
    return _arm_sizes(t * k, c * k, design.dropout_rate)


def power_at(design: TrialDesign, sizes: ArmSizes, use_t: bool = False) -> float:
    """Analytic power of the design evaluated at the given completer counts.

    ``use_t`` switches to a noncentral-t refinement (df = n - 2); the default
    z approximation is what the sizing arithmetic and all reference values use.
    """
    if use_t:
        df = sizes.n_total - 2
        se = design.endpoint_sd * math.sqrt(
            (1.0 - design.assumed_vr) * (1.0 / sizes.n_treatment + 1.0 / sizes.n_control)
        )
        t_crit = scipy.stats.t.ppf(1.0 - design.alpha / 2.0, df)
        return float(scipy.stats.nct.sf(t_crit, df, abs(design.effect_size) / se))
    return _power(design, sizes.n_treatment, sizes.n_control, design.assumed_vr)


def split_total(total: int, allocation_ratio: tuple[int, int]) -> tuple[int, int]:
    """Split a completer total into arms, rounding the treatment arm half up."""
    t, c = allocation_ratio
    n_t = int(math.floor(total * t / (t + c) + 0.5))
    return n_t, total - n_t


def apply_reduction(design: TrialDesign, strategy: ReductionStrategy) -> ArmSizes:
    """Convert the assumed VR into reduced arm sizes under the chosen strategy."""
    unadjusted = required_sample_size(replace(design, assumed_vr=0.0))

    if strategy.kind is ReductionKind.MAINTAIN_RATIO:
        return required_sample_size(design)

    if strategy.kind is ReductionKind.CONTROL_ARM_ONLY:
        n_t = unadjusted.n_treatment
        vr = design.assumed_vr
        # Smallest control arm whose adjusted SE does not exceed the
        # unadjusted SE of the original sizes.
        inv_nc = (1.0 / unadjusted.n_control + vr / n_t) / (1.0 - vr)
        n_c = _guarded_ceil(1.0 / inv_nc)
        if n_c < 2:
            raise InfeasibleReductionError(
                f"VR {vr} with a fixed treatment arm of {n_t} leaves no valid control arm"
            )
        return _arm_sizes(n_t, n_c, design.dropout_rate)

    if strategy.kind is ReductionKind.PARTIAL_REALIZATION:
        full = required_sample_size(design)
        target_total = unadjusted.n_total - strategy.realized_fraction * (
            unadjusted.n_total - full.n_total
        )
        t, c = design.allocation_ratio
        k = max(
            _guarded_ceil(target_total / (t + c)),
            _guarded_ceil(2.0 / t),
            _guarded_ceil(2.0 / c),
            1,
        )
        return _arm_sizes(t * k, c * k, design.dropout_rate)

    raise DomainError(f"unknown reduction kind {strategy.kind!r}")


def effective_sample_size(
    design: TrialDesign,
    observed_sd: float,
    observed_vr: float,
    observed_dropout: float,
    sizes: ArmSizes,
) -> EffectiveSampleSizeReport:
    """Re-run the design arithmetic with observed values against actual sizes.

    ``n_eff_required`` is the total the design would have asked for had the
    observed SD, VR, and dropout been known up front. ``information_fraction``
    compares the per-participant information assumed at design time to the
    observed one; a value of 0.9 means the trial behaves as if it had 10%
    fewer participants than planned.
    """
    if not (observed_sd > 0.0 and math.isfinite(observed_sd)):
        raise DomainError("observed_sd must be positive and finite")
    if not (0.0 <= observed_vr < 1.0):
        raise DomainError("observed_vr must be in [0, 1)")
    if not (0.0 <= observed_dropout < 1.0):
        raise DomainError("observed_dropout must be in [0, 1)")

    observed_design = replace(
        design,
        endpoint_sd=observed_sd,
        assumed_vr=observed_vr,
        dropout_rate=observed_dropout,
    )
    n_eff_required = required_sample_size(observed_design).n_total

    assumed_info = design.endpoint_sd**2 * (1.0 - design.assumed_vr) / (1.0 - design.dropout_rate)
    observed_info = observed_sd**2 * (1.0 - observed_vr) / (1.0 - observed_dropout)
    information_fraction = assumed_info / observed_info

    # Completer counts under the observed dropout, holding enrollment fixed.
    survival_scale = (1.0 - observed_dropout) / (1.0 - design.dropout_rate)
    achieved = _power(
        observed_design,
        sizes.n_treatment * survival_scale,
        sizes.n_control * survival_scale,
        observed_vr,
    )
    return EffectiveSampleSizeReport(
        n_actual=sizes.n_total,
        n_eff_required=n_eff_required,
        information_fraction=information_fraction,
        achieved_power=achieved,
    )


def power_vs_effective_fraction(fraction: float, design_power: float, alpha: float) -> float:
    """Power when the realized information is ``fraction`` of the design assumption."""
    if not (fraction > 0.0 and math.isfinite(fraction)):
        raise DomainError("fraction must be positive and finite")
    if not (0.0 < design_power < 1.0):
        raise DomainError("design_power must be in (0, 1)")
    z_alpha, z_power = _z_pair(alpha, design_power)
    return normal_cdf(math.sqrt(fraction) * (z_alpha + z_power) - z_alpha)


@dataclass(frozen=True)
class PowerCurve:
    """Power as a function of completer total, one series per VR value."""

    vr_values: tuple[float, ...]
    totals: tuple[int, ...]
    powers: tuple[tuple[float, ...], ...]  # powers[i][j] = power at totals[j] under vr_values[i]

    def series(self, vr: float) -> dict[int, float]:
        i = self.vr_values.index(vr)
        return dict(zip(self.totals, self.powers[i]))


def power_curve(design: TrialDesign, vr_values: Sequence[float], totals: Sequence[int]) -> PowerCurve:
    """Evaluate power over a grid of completer totals for each VR value."""
    if len(totals) == 0 or len(vr_values) == 0:
        raise DomainError("need at least one total and one VR value")
    for vr in vr_values:
        if not (0.0 <= vr < 1.0):
            raise DomainError(f"VR values must be in [0, 1), got {vr}")
    grid = []
    for vr in vr_values:
        d = replace(design, assumed_vr=float(vr))
        row = []
        for total in totals:
            n_t, n_c = split_total(int(total), design.allocation_ratio)
            row.append(power_at(d, _arm_sizes(n_t, n_c, design.dropout_rate)))
        grid.append(tuple(row))
    return PowerCurve(
        vr_values=tuple(float(v) for v in vr_values),
        totals=tuple(int(n) for n in totals),
        powers=tuple(grid),
    )


@dataclass(frozen=True)
class FixedFactor:
    """Shrink a point VR estimate by a fixed factor in (0, 1]."""

    factor: float

    def __post_init__(self):
        if not (0.0 < self.factor <= 1.0):
            raise DomainError("factor must be in (0, 1]")


@dataclass(frozen=True)
class Percentile:
    """Take a low percentile of a bootstrap VR distribution."""

    p: float
    distribution: tuple[float, ...]

    def __post_init__(self):
        if not (0.0 < self.p < 100.0):
            raise DomainError("percentile must be in (0, 100)")
        object.__setattr__(self, "distribution", tuple(float(v) for v in self.distribution))
        if len(self.distribution) == 0:
            raise DomainError("percentile method needs a nonempty distribution")


def conservative_vr(vr_point: float, method: FixedFactor | Percentile) -> float:
    """Conservative planning value for an expected variance reduction."""
    if not (0.0 <= vr_point < 1.0):
        raise DomainError("vr_point must be in [0, 1)")
    if isinstance(method, FixedFactor):
        return method.factor * vr_point
    if isinstance(method, Percentile):
        value = float(np.percentile(np.asarray(method.distribution), method.p))
        return min(max(value, 0.0), vr_point)
    raise DomainError(f"unknown conservative-VR method {method!r}")


def calibrated_effect_size(
    total_n: int,
    alpha: float = 0.05,
    target_power: float = 0.90,
    endpoint_sd: float = 1.0,
    allocation_ratio: tuple[int, int] = (1, 1),
) -> float:
    """Effect size for which the unadjusted design needs exactly ``total_n`` completers."""
    if total_n < 4:
        raise DomainError("total_n must be at least 4")
    t, c = allocation_ratio
    f_t = t / (t + c)
    f_c = c / (t + c)
    z_alpha, z_power = _z_pair(alpha, target_power)
    return endpoint_sd * (z_alpha + z_power) * math.sqrt((1.0 / f_t + 1.0 / f_c) / total_n)
