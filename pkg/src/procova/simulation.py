"""Monte Carlo engine: synthetic trials, empirical operating characteristics,
and blinded sample-size re-estimation.

Replications use independent RNG substreams derived from the master seed and
the replication index, so reports are bit-for-bit reproducible regardless of
how many worker processes execute them. The truth-generating process draws
(score, control outcome) bivariate normal with correlation rho, making the
true variance reduction exactly rho^2 and keeping analytic power oracles
available.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .cohort import CohortData, Participant
from .design import ArmSizes, TrialDesign, required_sample_size
from .errors import AnalysisError, DegenerateInputError, DomainError, ReestimationError
from .stats import normal_cdf, ols_fit, pearson

SIM_TIMEPOINT = "final"

WORKERS_ENV_VAR = "PROCOVA_WORKERS"


@dataclass(frozen=True)
class StandardCovariateSpec:
    """Extra baseline covariates x1..xN with given outcome correlations."""

    count: int
    outcome_correlations: tuple[float, ...]

    def __post_init__(self):
        if self.count != len(self.outcome_correlations):
            raise DomainError("need one outcome correlation per covariate")
        for c in self.outcome_correlations:
            if not (-1.0 < c < 1.0):
                raise DomainError("covariate correlations must be in (-1, 1)")


@dataclass(frozen=True)
class ScenarioSpec:
    """Truth parameters a design is stress-tested against."""

    design: TrialDesign
    true_effect: float
    true_sd: float
    true_score_correlation: float
    true_dropout: float = 0.0
    standard_covariate_spec: StandardCovariateSpec | None = None

    def __post_init__(self):
        if not math.isfinite(self.true_effect):
            raise DomainError("true_effect must be finite")
        if not (self.true_sd > 0.0 and math.isfinite(self.true_sd)):
            raise DomainError("true_sd must be positive and finite")
        if not (-1.0 < self.true_score_correlation < 1.0):
            raise DomainError("true_score_correlation must be in (-1, 1)")
        if not (0.0 <= self.true_dropout < 1.0):
            raise DomainError("true_dropout must be in [0, 1)")

    @property
    def implied_true_vr(self) -> float:
        return self.true_score_correlation**2


@dataclass(frozen=True)
class SsrPlan:
    """Blinded sample-size re-estimation at a single interim look."""

    interim_fraction: float
    max_n_total: int
    reestimation_targets: tuple[str, ...] = ("variance", "vr")
    increase_only: bool = True
    debias_sd: bool = False

    def __post_init__(self):
        if not (0.0 < self.interim_fraction < 1.0):
            raise DomainError("interim_fraction must be in (0, 1)")
        for target in self.reestimation_targets:
            if target not in ("variance", "vr", "dropout"):
                raise DomainError(f"unknown re-estimation target {target!r}")


@dataclass(frozen=True)
class Adjustment:
    """Covariate set used in the primary analysis."""

    include_score: bool = False
    standard_covariates: tuple[str, ...] = ()


UNADJUSTED = Adjustment()
SCORE_ADJUSTED = Adjustment(include_score=True)


@dataclass(frozen=True)
class FinalNSummary:
    minimum: int
    median: float
    maximum: int


@dataclass(frozen=True)
class SimulationReport:
    replications: int
    rejection_rate: float
    rejection_rate_se: float
    mean_se_adjusted: float
    mean_se_unadjusted: float
    realized_vr_mean: float
    master_seed: int
    final_n: FinalNSummary | None = None

    def to_json_dict(self) -> dict:
        payload = {
            "replications": self.replications,
            "rejection_rate": self.rejection_rate,
            "rejection_rate_se": self.rejection_rate_se,
            "mean_se_adjusted": self.mean_se_adjusted,
            "mean_se_unadjusted": self.mean_se_unadjusted,
            "realized_vr_mean": self.realized_vr_mean,
            "master_seed": self.master_seed,
            "final_n": None,
        }
        if self.final_n is not None:
            payload["final_n"] = {
                "minimum": self.final_n.minimum,
                "median": self.final_n.median,
                "maximum": self.final_n.maximum,
            }
        return payload


@dataclass(frozen=True)
class TrialAnalysis:
    effect_estimate: float
    se: float
    p_value: float
    n_treatment: int
    n_control: int


@dataclass(frozen=True)
class BlindedEstimate:
    sd_blinded: float
    vr_blinded: float
    dropout_blinded: float
    n_required_new: ArmSizes


# ---------------------------------------------------------------------------
# Truth generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _StageDraw:
    score: np.ndarray
    outcome_z: np.ndarray
    covariates: np.ndarray  # (k, m)
    dropout_u: np.ndarray


def _draw_stage(rng: np.random.Generator, k: int, spec: ScenarioSpec) -> _StageDraw:
    """Draw k participants; the draw order is prefix-stable across stage splits."""
    m = spec.standard_covariate_spec.count if spec.standard_covariate_spec else 0
    z = rng.standard_normal((k, 2 + m))
    u = rng.random(k)
    rho = spec.true_score_correlation
    outcome_z = z[:, 0]
    score = rho * outcome_z + math.sqrt(1.0 - rho * rho) * z[:, 1]
    cov = np.empty((k, m))
    if m:
        for j, c in enumerate(spec.standard_covariate_spec.outcome_correlations):
            cov[:, j] = c * outcome_z + math.sqrt(1.0 - c * c) * z[:, 2 + j]
    return _StageDraw(score=score, outcome_z=outcome_z, covariates=cov, dropout_u=u)


def _treatment_indicator(start: int, count: int, allocation_ratio: tuple[int, int]) -> np.ndarray:
    """Deterministic block allocation; any prefix stays within one block of the ratio."""
    t, c = allocation_ratio
    block = np.array([1.0] * t + [0.0] * c)
    idx = (np.arange(start, start + count)) % (t + c)
    return block[idx]


def generate_synthetic_cohort(spec: ScenarioSpec, sizes: ArmSizes, seed) -> CohortData:
    """Materialize one simulated enrollment as a CohortData.

    Enrollment covers ``sizes.n_enrolled_total`` participants; dropout clears
    the post-baseline outcome and flags the analysis timepoint incomplete.
    """
    rng = np.random.default_rng(seed)
    n = sizes.n_enrolled_total
    draw = _draw_stage(rng, n, spec)
    ind = _treatment_indicator(0, n, spec.design.allocation_ratio)
    outcome = spec.true_effect * ind + spec.true_sd * draw.outcome_z
    completed = draw.dropout_u >= spec.true_dropout

    cell = (spec.design.endpoint_label, SIM_TIMEPOINT)
    m = draw.covariates.shape[1]
    width = len(str(n))
    participants = []
    for i in range(n):
        participants.append(
            Participant(
                participant_id=f"sim-{i + 1:0{width}d}",
                arm="treatment" if ind[i] else "control",
                baseline={f"x{j + 1}": float(draw.covariates[i, j]) for j in range(m)},
                scores={cell: float(draw.score[i])},
                outcomes={cell: float(outcome[i])} if completed[i] else {},
                completed={SIM_TIMEPOINT: bool(completed[i])},
            )
        )
    return CohortData(cohort_id="synthetic", participants=tuple(participants))


# ---------------------------------------------------------------------------
# Trial analysis
# ---------------------------------------------------------------------------

def analyze_trial(
    cohort: CohortData,
    endpoint: str,
    timepoint: str,
    adjustment: Adjustment = UNADJUSTED,
) -> TrialAnalysis:
    """Complete-case OLS of outcome on intercept + arm (+ chosen covariates)."""
    cell = (endpoint, timepoint)
    completers = [
        p
        for p in cohort.participants
        if cell in p.outcomes and p.is_complete(timepoint) and p.arm is not None
    ]
    if adjustment.include_score:
        completers = [p for p in completers if cell in p.scores]
    arms = {p.arm for p in completers}
    if not arms <= {"treatment", "control"}:
        raise AnalysisError(f"arm labels must be treatment/control, found {sorted(arms)}")
    n_t = sum(1 for p in completers if p.arm == "treatment")
    n_c = len(completers) - n_t
    if n_t == 0 or n_c == 0:
        raise AnalysisError("both arms need at least one completer")

    y = np.array([p.outcomes[cell] for p in completers])
    columns = [np.ones(len(completers)), np.array([1.0 if p.arm == "treatment" else 0.0 for p in completers])]
    for name in adjustment.standard_covariates:
        raw = np.array([p.baseline.get(name, np.nan) for p in completers])
        present = np.isfinite(raw)
        if not present.any():
            raise AnalysisError(f"covariate {name!r} missing for every completer")
        raw[~present] = raw[present].mean()
        columns.append(raw)
    if adjustment.include_score:
        columns.append(np.array([p.scores[cell] for p in completers]))

    fit = ols_fit(np.column_stack(columns), y)
    estimate = float(fit.coefficients[1])
    se = float(fit.standard_errors[1])
    p_value = 2.0 * normal_cdf(-abs(estimate / se))
    return TrialAnalysis(
        effect_estimate=estimate, se=se, p_value=p_value, n_treatment=n_t, n_control=n_c
    )


# ---------------------------------------------------------------------------
# Blinded re-estimation
# ---------------------------------------------------------------------------

def _blinded_from_arrays(
    y: np.ndarray,
    s: np.ndarray,
    n_enrolled: int,
    design: TrialDesign,
    targets: Sequence[str],
    debias: bool,
) -> BlindedEstimate:
    n = y.shape[0]
    if n < 20:
        raise ReestimationError(f"blinded re-estimation needs at least 20 completers, found {n}")
    variance = float(np.var(y, ddof=1))
    if variance <= 0.0:
        raise ReestimationError("interim outcomes have zero variance")
    if debias:
        t, c = design.allocation_ratio
        f_t = t / (t + c)
        f_c = c / (t + c)
        variance -= design.effect_size**2 * f_t * f_c
        if variance <= 0.0:
            raise ReestimationError("debiased interim variance is not positive")
    sd_blinded = math.sqrt(variance)
    try:
        vr_blinded = pearson(s, y).vr_asymptotic
    except DegenerateInputError as exc:
        raise ReestimationError(str(exc)) from exc
    dropout_blinded = 1.0 - n / n_enrolled if n_enrolled > n else 0.0

    observed = design
    if "variance" in targets:
        observed = replace(observed, endpoint_sd=sd_blinded)
    if "vr" in targets:
        observed = replace(observed, assumed_vr=min(vr_blinded, 1.0 - 1e-12))
    if "dropout" in targets:
        observed = replace(observed, dropout_rate=dropout_blinded)
    return BlindedEstimate(
        sd_blinded=sd_blinded,
        vr_blinded=vr_blinded,
        dropout_blinded=dropout_blinded,
        n_required_new=required_sample_size(observed),
    )


def blinded_reestimate(
    pooled_interim: CohortData,
    design: TrialDesign,
    targets: Sequence[str] = ("variance", "vr"),
    debias: bool = False,
) -> BlindedEstimate:
    """Re-estimate the required sample size from pooled, arm-label-free data.

    ``debias`` subtracts the design effect's contribution delta^2 * f_t * f_c
    from the pooled variance before taking the SD; off by default because the
    inflation is second order at realistic effect sizes.
    """
    cell = (design.endpoint_label, SIM_TIMEPOINT)
    completers = [
        p for p in pooled_interim.participants
        if cell in p.outcomes and p.is_complete(SIM_TIMEPOINT)
    ]
    y = np.array([p.outcomes[cell] for p in completers])
    s = np.array([p.scores[cell] for p in completers])
    return _blinded_from_arrays(y, s, len(pooled_interim), design, targets, debias)


# ---------------------------------------------------------------------------
# Replication kernel (array-based; tested against analyze_trial)
# ---------------------------------------------------------------------------

def _fast_arm_fit(X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Arm coefficient and its classical SE via the small normal equations."""
    xtx = X.T @ X
    try:
        inv = np.linalg.inv(xtx)
    except np.linalg.LinAlgError as exc:
        raise AnalysisError(f"singular analysis design: {exc}") from exc
    beta = inv @ (X.T @ y)
    resid = y - X @ beta
    dof = y.shape[0] - X.shape[1]
    if dof <= 0:
        raise AnalysisError("not enough completers for the analysis model")
    s2 = float(resid @ resid) / dof
    return float(beta[1]), math.sqrt(s2 * inv[1, 1])


def _covariate_indices(spec: ScenarioSpec, names: Sequence[str]) -> list[int]:
    m = spec.standard_covariate_spec.count if spec.standard_covariate_spec else 0
    available = [f"x{j + 1}" for j in range(m)]
    indices = []
    for name in names:
        if name not in available:
            raise DomainError(f"scenario generates covariates {available}, not {name!r}")
        indices.append(available.index(name))
    return indices


def _analyze_arrays(
    score: np.ndarray,
    outcome_z: np.ndarray,
    covariates: np.ndarray,
    dropout_u: np.ndarray,
    ind: np.ndarray,
    spec: ScenarioSpec,
    adjustment: Adjustment,
) -> tuple[bool, float, float, float]:
    """(reject, se_adjusted, se_unadjusted, realized_vr) for one replication."""
    keep = dropout_u >= spec.true_dropout
    if not keep.any():
        raise AnalysisError("every participant dropped out")
    ind_k = ind[keep]
    if ind_k.sum() == 0 or ind_k.sum() == ind_k.size:
        raise AnalysisError("both arms need at least one completer")
    y = spec.true_effect * ind_k + spec.true_sd * outcome_z[keep]
    s = score[keep]
    cov_idx = _covariate_indices(spec, adjustment.standard_covariates)
    cov = covariates[keep][:, cov_idx] if cov_idx else np.empty((ind_k.size, 0))
    ones = np.ones(ind_k.size)

    _, se_unadj = _fast_arm_fit(np.column_stack([ones, ind_k]), y)
    X_adj = np.column_stack([ones, ind_k, cov, s])
    est_adj, se_adj = _fast_arm_fit(X_adj, y)

    if adjustment.include_score:
        estimate, se = est_adj, se_adj
    elif cov_idx:
        estimate, se = _fast_arm_fit(np.column_stack([ones, ind_k, cov]), y)
    else:
        estimate, se = _fast_arm_fit(np.column_stack([ones, ind_k]), y)
    p_value = 2.0 * normal_cdf(-abs(estimate / se))
    realized_vr = 1.0 - (se_adj / se_unadj) ** 2
    return p_value < spec.design.alpha, se_adj, se_unadj, realized_vr


def _rep_rng(master_seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(rep,)))


def _mc_replicate(spec: ScenarioSpec, sizes: ArmSizes, adjustment: Adjustment, rep_rng):
    draw = _draw_stage(rep_rng, sizes.n_enrolled_total, spec)
    ind = _treatment_indicator(0, sizes.n_enrolled_total, spec.design.allocation_ratio)
    reject, se_adj, se_unadj, vr = _analyze_arrays(
        draw.score, draw.outcome_z, draw.covariates, draw.dropout_u, ind, spec, adjustment
    )
    return reject, se_adj, se_unadj, vr, sizes.n_enrolled_total


def _ssr_replicate(
    spec: ScenarioSpec, sizes: ArmSizes, plan: SsrPlan, adjustment: Adjustment, rep_rng
):
    planned = sizes.n_enrolled_total
    n_interim = min(max(int(math.floor(plan.interim_fraction * planned + 0.5)), 1), planned)
    stage1 = _draw_stage(rep_rng, n_interim, spec)
    keep1 = stage1.dropout_u >= spec.true_dropout
    y1 = spec.true_effect * _treatment_indicator(0, n_interim, spec.design.allocation_ratio)[keep1]
    y1 = y1 + spec.true_sd * stage1.outcome_z[keep1]
    estimate = _blinded_from_arrays(
        y1, stage1.score[keep1], n_interim, spec.design,
        plan.reestimation_targets, plan.debias_sd,
    )
    needed = estimate.n_required_new.n_enrolled_total
    if plan.increase_only:
        final = max(planned, needed)
    else:
        final = max(n_interim, needed)
    final = min(final, plan.max_n_total)

    stage2 = _draw_stage(rep_rng, final - n_interim, spec)
    score = np.concatenate([stage1.score, stage2.score])
    outcome_z = np.concatenate([stage1.outcome_z, stage2.outcome_z])
    covariates = np.concatenate([stage1.covariates, stage2.covariates])
    dropout_u = np.concatenate([stage1.dropout_u, stage2.dropout_u])
    ind = _treatment_indicator(0, final, spec.design.allocation_ratio)
    reject, se_adj, se_unadj, vr = _analyze_arrays(
        score, outcome_z, covariates, dropout_u, ind, spec, adjustment
    )
    return reject, se_adj, se_unadj, vr, final


def _run_chunk(args):
    kind, spec, sizes, adjustment, plan, master_seed, start, stop = args
    rejects = np.empty(stop - start, dtype=bool)
    se_adj = np.empty(stop - start)
    se_unadj = np.empty(stop - start)
    vr = np.empty(stop - start)
    final_n = np.empty(stop - start, dtype=int)
    for i, rep in enumerate(range(start, stop)):
        rng = _rep_rng(master_seed, rep)
        try:
            if kind == "ssr":
                result = _ssr_replicate(spec, sizes, plan, adjustment, rng)
            else:
                result = _mc_replicate(spec, sizes, adjustment, rng)
        except (AnalysisError, ReestimationError) as exc:
            raise AnalysisError(f"replication {rep} failed: {exc}") from exc
        rejects[i], se_adj[i], se_unadj[i], vr[i], final_n[i] = result
    return rejects, se_adj, se_unadj, vr, final_n


def _resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV_VAR)
    return max(1, int(env)) if env else 1


def _execute(kind, spec, sizes, adjustment, plan, reps, master_seed, workers):
    n_workers = _resolve_workers(workers)
    if n_workers == 1 or reps < 2 * n_workers:
        chunks = [_run_chunk((kind, spec, sizes, adjustment, plan, master_seed, 0, reps))]
    else:
        bounds = np.linspace(0, reps, 4 * n_workers + 1, dtype=int)
        args = [
            (kind, spec, sizes, adjustment, plan, master_seed, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            chunks = list(pool.map(_run_chunk, args))
    rejects = np.concatenate([c[0] for c in chunks])
    se_adj = np.concatenate([c[1] for c in chunks])
    se_unadj = np.concatenate([c[2] for c in chunks])
    vr = np.concatenate([c[3] for c in chunks])
    final_n = np.concatenate([c[4] for c in chunks])
    rate = float(rejects.mean())
    return SimulationReport(
        replications=reps,
        rejection_rate=rate,
        rejection_rate_se=math.sqrt(rate * (1.0 - rate) / reps),
        mean_se_adjusted=float(se_adj.mean()),
        mean_se_unadjusted=float(se_unadj.mean()),
        realized_vr_mean=float(vr.mean()),
        master_seed=master_seed,
        final_n=FinalNSummary(
            minimum=int(final_n.min()),
            median=float(np.median(final_n)),
            maximum=int(final_n.max()),
        ),
    )


def run_monte_carlo(
    spec: ScenarioSpec,
    sizes: ArmSizes,
    adjustment: Adjustment,
    reps: int,
    seed: int,
    workers: int | None = None,
) -> SimulationReport:
    """Empirical rejection rate at level alpha over seeded replications.

    Use at least 1000 replications when estimating power or type I error.
    The report is reproducible bit for bit for a given seed, independent of
    the worker count.
    """
    if reps < 1:
        raise DomainError("reps must be at least 1")
    report = _execute("mc", spec, sizes, adjustment, None, reps, int(seed), workers)
    return replace(report, final_n=None)


def simulate_with_ssr(
    spec: ScenarioSpec,
    sizes: ArmSizes,
    plan: SsrPlan,
    reps: int,
    seed: int,
    adjustment: Adjustment = SCORE_ADJUSTED,
    workers: int | None = None,
) -> SimulationReport:
    """Monte Carlo with a blinded interim re-estimation of enrollment.

    Each replication enrolls to the interim fraction, re-estimates the
    required size from pooled data, tops enrollment up to the ceiling if the
    (default increase-only) rule fires, completes the trial, and analyzes.
    A plan that cannot change enrollment (ceiling at the planned total under
    the increase-only rule) runs on the plain Monte Carlo path, so a disabled
    plan reproduces :func:`run_monte_carlo` exactly.
    """
    if reps < 1:
        raise DomainError("reps must be at least 1")
    if plan.max_n_total < sizes.n_enrolled_total:
        raise DomainError("max_n_total must be at least the planned enrollment")
    if plan.increase_only and plan.max_n_total <= sizes.n_enrolled_total:
        return _execute("mc", spec, sizes, adjustment, None, reps, int(seed), workers)
    return _execute("ssr", spec, sizes, adjustment, plan, reps, int(seed), workers)
