"""Trial design with prognostic covariate adjustment.

Power and sample-size reduction for two-arm trials with continuous
endpoints, evaluation of prognostic covariates on historical cohorts,
Monte Carlo risk quantification with blinded sample-size re-estimation,
and credibility-report assembly.
"""

__version__ = "0.1.0"

from .design import (  # noqa: F401
    ArmSizes,
    EffectiveSampleSizeReport,
    FixedFactor,
    Percentile,
    PowerCurve,
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
)
from .cohort import (  # noqa: F401
    CohortData,
    CorrelatedCell,
    Participant,
    RelevanceGrade,
    load_cohort_csv,
    synthetic_correlated_cohort,
    write_cohort_csv,
)
from .evaluation import (  # noqa: F401
    BaselinePrognosticModel,
    BootstrapSummary,
    EvaluationResult,
    LeakageAuditReport,
    NestedCvReport,
    ablate_feature,
    bootstrap_vr,
    evaluate_cohort,
    fit_baseline_prognostic_model,
    leakage_audit,
    nested_cv_evaluate,
    randomization_inference_vr,
)
from .simulation import (  # noqa: F401
    Adjustment,
    BlindedEstimate,
    ScenarioSpec,
    SimulationReport,
    SsrPlan,
    StandardCovariateSpec,
    analyze_trial,
    blinded_reestimate,
    generate_synthetic_cohort,
    run_monte_carlo,
    simulate_with_ssr,
)
from .credibility import (  # noqa: F401
    CredibilityReport,
    DesignEntry,
    MitigationItem,
    MitigationKind,
    Provenance,
    Recommendation,
    RiskTable,
    RiskTolerance,
    assemble_report,
    parse_report_json,
    recommend_reduction,
    render,
    risk_quantification,
)
