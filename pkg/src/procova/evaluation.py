"""Evaluate prognostic covariates on historical cohorts.

Three variance-reduction metrics per cohort and endpoint, all relative to an
unadjusted analysis unless stated otherwise:

    vr_standard     standard covariates vs nothing
    vr_full         model-derived score plus standard covariates vs nothing
    vr_incremental  score plus standard covariates vs standard covariates only

The incremental value is a squared partial correlation, which is why
(1 - vr_full) = (1 - vr_standard) * (1 - vr_incremental) and the incremental
metric is not the difference of the other two.

Evaluation is complete-case on (score, outcome); missing standard covariates
are mean-imputed from the evaluable participants.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .cohort import Cell, CohortData, Participant
from .errors import (
    AnalysisError,
    CollinearityError,
    DegenerateInputError,
    DomainError,
    EvaluabilityError,
    LeakageError,
    ReliabilityError,
    UnderdeterminedError,
)
from .stats import ols_fit, partial_correlation

METHOD_CORRELATION = "correlation"
METHOD_RANDOMIZATION_INFERENCE = "randomization_inference"
METHOD_STUDY_ANALYSIS = "study_analysis"


@dataclass(frozen=True)
class BootstrapSummary:
    mean: float
    percentile: float
    percentile_value: float
    n_replicates: int
    n_skipped: int
    seed: int


@dataclass(frozen=True)
class EvaluationResult:
    cohort_id: str
    endpoint: str
    timepoint: str
    n_evaluable: int
    vr_standard: float
    vr_full: float
    vr_incremental: float
    method: str
    bootstrap: BootstrapSummary | None = None


def _collect_arrays(
    parts: Sequence[Participant],
    endpoint: str,
    timepoint: str,
    standard_covariates: Sequence[str],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(outcome, score, imputed covariate matrix) over evaluable participants."""
    cell: Cell = (endpoint, timepoint)
    y = np.array([p.outcomes[cell] for p in parts])
    s = np.array([p.scores[cell] for p in parts])
    cov = np.empty((len(parts), len(standard_covariates)))
    for j, name in enumerate(standard_covariates):
        column = np.array([p.baseline.get(name, np.nan) for p in parts])
        present = np.isfinite(column)
        if not present.any():
            raise EvaluabilityError(
                f"standard covariate {name!r} is missing for every evaluable participant"
            )
        column[~present] = column[present].mean()
        cov[:, j] = column
    return y, s, cov


def _vr_metrics(y: np.ndarray, s: np.ndarray, cov: np.ndarray) -> tuple[float, float, float]:
    n = y.shape[0]
    controls = np.column_stack([np.ones(n), cov])
    yc = y - y.mean()
    tss = float(yc @ yc)
    if tss == 0.0:
        raise DegenerateInputError("outcome has zero variance")

    if cov.shape[1]:
        rss_standard = ols_fit(controls, y).rss
    else:
        rss_standard = tss
    rss_full = ols_fit(np.column_stack([controls, s]), y).rss

    vr_standard = max(0.0, 1.0 - rss_standard / tss)
    vr_full = max(0.0, 1.0 - rss_full / tss)
    vr_incremental = partial_correlation(s, y, controls).vr_asymptotic
    return vr_standard, vr_full, vr_incremental


def evaluate_cohort(
    cohort: CohortData,
    endpoint: str,
    timepoint: str,
    standard_covariates: Sequence[str] = (),
) -> EvaluationResult:
    """Correlation-method VR metrics for one cohort and endpoint/timepoint."""
    parts = cohort.evaluable(endpoint, timepoint)
    n = len(parts)
    needed = len(standard_covariates) + 3
    if n < max(3, needed):
        raise EvaluabilityError(
            f"{cohort.cohort_id}: {n} evaluable participants for "
            f"{endpoint}/{timepoint}, need at least {max(3, needed)}"
        )
    y, s, cov = _collect_arrays(parts, endpoint, timepoint, standard_covariates)
    vr_standard, vr_full, vr_incremental = _vr_metrics(y, s, cov)
    return EvaluationResult(
        cohort_id=cohort.cohort_id,
        endpoint=endpoint,
        timepoint=timepoint,
        n_evaluable=n,
        vr_standard=vr_standard,
        vr_full=vr_full,
        vr_incremental=vr_incremental,
        method=METHOD_CORRELATION,
    )


def randomization_inference_vr(
    cohort: CohortData,
    endpoint: str,
    timepoint: str,
    standard_covariates: Sequence[str] = (),
    k_rerandomizations: int = 1000,
    seed: int = 0,
) -> EvaluationResult:
    """VR estimated from pseudo 1:1 randomizations of a cohort without arms.

    For each replicate the cohort is randomly split into two pseudo arms and
    analyzed adjusted and unadjusted; the replicate VR is one minus the
    squared ratio of the arm-coefficient standard errors. Results are the
    means over replicates and are deterministic given the seed.
    """
    if k_rerandomizations < 100:
        raise DomainError("k_rerandomizations must be at least 100")
    parts = cohort.evaluable(endpoint, timepoint)
    n = len(parts)
    if n < 10:
        raise EvaluabilityError(
            f"{cohort.cohort_id}: randomization inference needs at least 10 "
            f"evaluable participants, found {n}"
        )
    y, s, cov = _collect_arrays(parts, endpoint, timepoint, standard_covariates)
    has_cov = cov.shape[1] > 0

    rng = np.random.default_rng(seed)
    vr_standard = np.empty(k_rerandomizations)
    vr_full = np.empty(k_rerandomizations)
    vr_incremental = np.empty(k_rerandomizations)
    ones = np.ones(n)
    for rep in range(k_rerandomizations):
        order = rng.permutation(n)
        arm = np.zeros(n)
        arm[order[: n // 2]] = 1.0
        try:
            se_unadj = ols_fit(np.column_stack([ones, arm]), y).standard_errors[1]
            if has_cov:
                se_standard = ols_fit(np.column_stack([ones, arm, cov]), y).standard_errors[1]
            else:
                se_standard = se_unadj
            se_full = ols_fit(np.column_stack([ones, arm, cov, s]), y).standard_errors[1]
        except (DegenerateInputError, DomainError, CollinearityError) as exc:
            raise AnalysisError(f"replicate {rep} failed: {exc}") from exc
        vr_standard[rep] = 1.0 - (se_standard / se_unadj) ** 2
        vr_full[rep] = 1.0 - (se_full / se_unadj) ** 2
        vr_incremental[rep] = 1.0 - (se_full / se_standard) ** 2

    return EvaluationResult(
        cohort_id=cohort.cohort_id,
        endpoint=endpoint,
        timepoint=timepoint,
        n_evaluable=n,
        vr_standard=float(vr_standard.mean()),
        vr_full=float(vr_full.mean()),
        vr_incremental=float(vr_incremental.mean()),
        method=METHOD_RANDOMIZATION_INFERENCE,
    )


def bootstrap_vr(
    cohort: CohortData,
    endpoint: str,
    timepoint: str,
    standard_covariates: Sequence[str] = (),
    n_replicates: int = 1000,
    percentile: float = 20.0,
    seed: int = 0,
) -> BootstrapSummary:
    """Nonparametric bootstrap of vr_full over participants.

    Degenerate replicates (no remaining variance) are skipped and counted;
    more than 10% skipped raises :class:`ReliabilityError`.
    """
    if n_replicates < 200:
        raise DomainError("n_replicates must be at least 200")
    if not (0.0 < percentile < 100.0):
        raise DomainError("percentile must be in (0, 100)")
    parts = cohort.evaluable(endpoint, timepoint)
    if len(parts) < 3:
        raise EvaluabilityError(f"{cohort.cohort_id}: too few evaluable participants")
    y, s, cov = _collect_arrays(parts, endpoint, timepoint, standard_covariates)
    n = y.shape[0]

    rng = np.random.default_rng(seed)
    values = []
    skipped = 0
    for _ in range(n_replicates):
        idx = rng.integers(0, n, n)
        try:
            _, vr_full, _ = _vr_metrics(y[idx], s[idx], cov[idx])
        except (DegenerateInputError, DomainError, CollinearityError):
            skipped += 1
            continue
        values.append(vr_full)
    if skipped > 0.10 * n_replicates:
        raise ReliabilityError(
            f"{skipped} of {n_replicates} bootstrap replicates were degenerate"
        )
    values = np.asarray(values)
    return BootstrapSummary(
        mean=float(values.mean()),
        percentile=float(percentile),
        percentile_value=float(np.percentile(values, percentile)),
        n_replicates=n_replicates,
        n_skipped=skipped,
        seed=seed,
    )


@dataclass(frozen=True)
class BaselinePrognosticModel:
    """Ridge regression on standardized baseline features.

    Standardization and imputation statistics come from the training rows
    only. Coefficients are stored in original feature units; prediction
    mean-imputes any missing feature with its training mean.
    """

    endpoint: str
    timepoint: str
    feature_names: tuple[str, ...]
    feature_means: tuple[float, ...]
    feature_sds: tuple[float, ...]
    coefficients: tuple[float, ...]
    intercept: float
    ridge_lambda: float
    training_ids: frozenset[str]

    def predict(self, baseline: Mapping[str, float]) -> float:
        total = self.intercept
        for name, mean, coef in zip(self.feature_names, self.feature_means, self.coefficients):
            value = baseline.get(name)
            if value is None or not math.isfinite(value):
                value = mean
            total += coef * value
        return total

    def score_cohort(self, cohort: CohortData) -> CohortData:
        """Copy of the cohort with this model's predictions attached as scores."""
        cell: Cell = (self.endpoint, self.timepoint)
        rescored = tuple(
            replace(p, scores={**p.scores, cell: self.predict(p.baseline)})
            for p in cohort.participants
        )
        return replace(cohort, participants=rescored)


def fit_baseline_prognostic_model(
    training: CohortData,
    endpoint: str,
    timepoint: str,
    ridge_lambda: float,
    features: Sequence[str] | None = None,
) -> BaselinePrognosticModel:
    """Fit the ridge prognostic model on a training cohort.

    The intercept is unpenalized: features are standardized (population SD)
    and the outcome centered before solving, then coefficients are mapped
    back to original units.
    """
    if ridge_lambda < 0.0:
        raise DomainError("ridge_lambda must be nonnegative")
    cell: Cell = (endpoint, timepoint)
    rows = [p for p in training.participants if cell in p.outcomes and p.is_complete(timepoint)]
    names = tuple(features) if features is not None else tuple(training.feature_names())
    if len(rows) <= len(names):
        raise UnderdeterminedError(
            f"{len(rows)} training rows cannot identify {len(names)} features plus an intercept"
        )

    y = np.array([p.outcomes[cell] for p in rows])
    F = np.empty((len(rows), len(names)))
    for j, name in enumerate(names):
        F[:, j] = [p.baseline.get(name, np.nan) for p in rows]
    means = np.empty(len(names))
    for j, name in enumerate(names):
        present = np.isfinite(F[:, j])
        if not present.any():
            raise DegenerateInputError(f"feature {name!r} is missing for every training row")
        means[j] = F[present, j].mean()
        F[~present, j] = means[j]
    sds = F.std(axis=0)
    sds[sds == 0.0] = 1.0

    Z = (F - means) / sds
    y_mean = y.mean()
    yc = y - y_mean
    if ridge_lambda == 0.0:
        b_std, *_ = np.linalg.lstsq(Z, yc, rcond=None)
    else:
        augmented = np.vstack([Z, math.sqrt(ridge_lambda) * np.eye(len(names))])
        target = np.concatenate([yc, np.zeros(len(names))])
        b_std, *_ = np.linalg.lstsq(augmented, target, rcond=None)

    coefficients = b_std / sds
    intercept = y_mean - float(coefficients @ means)
    return BaselinePrognosticModel(
        endpoint=endpoint,
        timepoint=timepoint,
        feature_names=names,
        feature_means=tuple(float(v) for v in means),
        feature_sds=tuple(float(v) for v in sds),
        coefficients=tuple(float(v) for v in coefficients),
        intercept=float(intercept),
        ridge_lambda=float(ridge_lambda),
        training_ids=frozenset(p.participant_id for p in rows),
    )


def ablate_feature(cohort: CohortData, feature_name: str) -> CohortData:
    """Copy of the cohort with one baseline feature marked missing everywhere."""
    if feature_name not in cohort.feature_names():
        raise DomainError(f"unknown baseline feature {feature_name!r}")
    stripped = tuple(
        replace(p, baseline={k: v for k, v in p.baseline.items() if k != feature_name})
        for p in cohort.participants
    )
    return replace(cohort, participants=stripped)


@dataclass(frozen=True)
class LeakageAuditReport:
    passed: bool
    violations: tuple[str, ...]


def leakage_audit(
    training_ids,
    test_ids,
    transform_provenance: Mapping[str, bool] | None = None,
    prediction_inputs: Mapping[str, float] | None = None,
) -> LeakageAuditReport:
    """Check the separation rules that keep an evaluation leak-free.

    PASS requires disjoint training/test IDs, every data transform fitted on
    training data only, and no prediction input tagged after randomization
    (timepoint tags are in study time; baseline is 0).  Violations are report
    content, not exceptions.
    """
    violations: list[str] = []
    overlap = sorted(set(training_ids) & set(test_ids))
    for pid in overlap:
        violations.append(f"participant {pid!r} appears in both the training and test sets")
    for name, training_only in sorted((transform_provenance or {}).items()):
        if not training_only:
            violations.append(f"transform {name!r} was not fit on training data only")
    for name, tag in sorted((prediction_inputs or {}).items()):
        if tag > 0:
            violations.append(
                f"prediction input {name!r} is forward-looking (tagged timepoint {tag})"
            )
    return LeakageAuditReport(passed=not violations, violations=tuple(violations))


@dataclass(frozen=True)
class NestedCvReport:
    per_fold: tuple[EvaluationResult, ...]
    unevaluable_folds: tuple[str, ...]
    selected_lambdas: tuple[float, ...]
    pooled_vr_standard: float
    pooled_vr_full: float
    pooled_vr_incremental: float
    n_total: int
    seed: int


def _stable_fold(token: str, n_folds: int) -> int:
    digest = hashlib.sha256(token.encode()).digest()
    return int.from_bytes(digest[:8], "big") % n_folds


def _merge_rows(rows: list[tuple[str, Participant]], label: str) -> CohortData:
    qualified = tuple(
        replace(p, participant_id=f"{cid}:{p.participant_id}") for cid, p in rows
    )
    return CohortData(cohort_id=label, participants=qualified)


def nested_cv_evaluate(
    cohorts: Sequence[CohortData],
    endpoint: str,
    timepoint: str,
    lambda_grid: Sequence[float],
    outer_folds: int = 5,
    inner_folds: int = 3,
    seed: int = 0,
    fold_by_study: bool = False,
    standard_covariates: Sequence[str] = (),
) -> NestedCvReport:
    """Held-out VR metrics from nested cross-validation of the ridge model.

    Outer folds are evaluated with predictions from a model tuned (inner CV
    over ``lambda_grid``) and refit on the remaining data. Fold assignment is
    hash-stable on participant id and the seed; ``fold_by_study`` uses each
    cohort as one outer fold instead. Training/held-out separation is
    asserted with :func:`leakage_audit` and a violation is a hard failure.
    """
    if not cohorts:
        raise DomainError("need at least one cohort")
    if not lambda_grid:
        raise DomainError("lambda_grid must be nonempty")
    if fold_by_study:
        if len(cohorts) < 2:
            raise DomainError("fold_by_study needs at least two cohorts")
    elif outer_folds < 2 or inner_folds < 2:
        raise DomainError("outer_folds and inner_folds must both be at least 2")

    pool: list[tuple[str, Participant]] = [
        (c.cohort_id, p) for c in cohorts for p in c.participants
    ]
    features = tuple(sorted({name for _, p in pool for name in p.baseline}))

    if fold_by_study:
        fold_labels = [c.cohort_id for c in cohorts]
        assignment = {f"{cid}:{p.participant_id}": cid for cid, p in pool}
    else:
        fold_labels = [f"fold{i}" for i in range(outer_folds)]
        assignment = {
            f"{cid}:{p.participant_id}": fold_labels[
                _stable_fold(f"{seed}:outer:{cid}:{p.participant_id}", outer_folds)
            ]
            for cid, p in pool
        }

    per_fold: list[EvaluationResult] = []
    unevaluable: list[str] = []
    lambdas: list[float] = []
    for label in fold_labels:
        train_rows = [(cid, p) for cid, p in pool if assignment[f"{cid}:{p.participant_id}"] != label]
        test_rows = [(cid, p) for cid, p in pool if assignment[f"{cid}:{p.participant_id}"] == label]
        if not train_rows or not test_rows:
            unevaluable.append(label)
            lambdas.append(float("nan"))
            continue

        best_lambda = _select_lambda(
            train_rows, endpoint, timepoint, lambda_grid, inner_folds, seed, features
        )
        lambdas.append(best_lambda)
        model = fit_baseline_prognostic_model(
            _merge_rows(train_rows, f"{label}-train"), endpoint, timepoint, best_lambda, features
        )

        test_cohort = _merge_rows(test_rows, label)
        audit = leakage_audit(
            model.training_ids,
            [p.participant_id for p in test_cohort.participants],
            transform_provenance={"standardization": True, "mean_imputation": True},
            prediction_inputs={name: 0.0 for name in features},
        )
        if not audit.passed:
            raise LeakageError("; ".join(audit.violations))

        scored = model.score_cohort(test_cohort)
        try:
            per_fold.append(evaluate_cohort(scored, endpoint, timepoint, standard_covariates))
        except EvaluabilityError:
            unevaluable.append(label)

    if not per_fold:
        raise EvaluabilityError("no outer fold was evaluable")
    weights = np.array([r.n_evaluable for r in per_fold], dtype=float)
    weights /= weights.sum()
    return NestedCvReport(
        per_fold=tuple(per_fold),
        unevaluable_folds=tuple(unevaluable),
        selected_lambdas=tuple(lambdas),
        pooled_vr_standard=float(weights @ [r.vr_standard for r in per_fold]),
        pooled_vr_full=float(weights @ [r.vr_full for r in per_fold]),
        pooled_vr_incremental=float(weights @ [r.vr_incremental for r in per_fold]),
        n_total=int(sum(r.n_evaluable for r in per_fold)),
        seed=seed,
    )


def _select_lambda(
    train_rows: list[tuple[str, Participant]],
    endpoint: str,
    timepoint: str,
    lambda_grid: Sequence[float],
    inner_folds: int,
    seed: int,
    features: tuple[str, ...],
) -> float:
    """Inner-CV squared-error selection; ties resolve to the earlier grid entry."""
    if len(lambda_grid) == 1:
        return float(lambda_grid[0])
    cell: Cell = (endpoint, timepoint)
    inner = {
        f"{cid}:{p.participant_id}": _stable_fold(
            f"{seed}:inner:{cid}:{p.participant_id}", inner_folds
        )
        for cid, p in train_rows
    }
    best_lambda = float(lambda_grid[0])
    best_sse = math.inf
    for lam in lambda_grid:
        sse = 0.0
        usable = False
        for j in range(inner_folds):
            fit_rows = [(cid, p) for cid, p in train_rows if inner[f"{cid}:{p.participant_id}"] != j]
            val_rows = [
                (cid, p)
                for cid, p in train_rows
                if inner[f"{cid}:{p.participant_id}"] == j and cell in p.outcomes
            ]
            if not val_rows:
                continue
            try:
                model = fit_baseline_prognostic_model(
                    _merge_rows(fit_rows, "inner-train"), endpoint, timepoint, float(lam), features
                )
            except (UnderdeterminedError, DegenerateInputError):
                continue
            usable = True
            for _, p in val_rows:
                sse += (model.predict(p.baseline) - p.outcomes[cell]) ** 2
        if usable and sse < best_sse:
            best_sse = sse
            best_lambda = float(lam)
    return best_lambda
