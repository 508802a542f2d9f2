"""Collusion-group detection from graded exam question scores.

Per-student collusion scores are computed from pairwise identity scores,
thresholded with class-size-specific cutoffs, grouped, and assigned both a
fixed empirical false-positive rate and a synthetic one estimated from a
Gaussian-copula null model fitted to the exam itself.
"""

from qsid.exam_data import (
    ExamEligibility,
    ExclusionLog,
    ScoreMatrix,
    check_eligibility,
    combine_exams,
    parse_exam,
    preprocess,
)
from qsid.metrics import (
    ComplexityProfile,
    StudentMetrics,
    complexity,
    identity_scores,
    local_median_windows,
    student_metrics,
)
from qsid.groups import (
    CollusionGroup,
    RiskBin,
    apply_synfpr_exclusion,
    assign_bins,
    merge_groups,
    provisional_groups,
)
from qsid.calibration import (
    FprInterval,
    ThresholdTable,
    calibrate_thresholds,
    default_threshold_table,
    threshold_lookup,
    wald_ci,
)
from qsid.synthetic import (
    CopulaModel,
    SynFprEstimate,
    fit_copula,
    replicate_count,
    sample_synthetic,
    synthetic_fpr,
)
from qsid.pipeline import ReportBundle, RunConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ScoreMatrix",
    "ExclusionLog",
    "ExamEligibility",
    "parse_exam",
    "preprocess",
    "check_eligibility",
    "combine_exams",
    "StudentMetrics",
    "ComplexityProfile",
    "identity_scores",
    "student_metrics",
    "local_median_windows",
    "complexity",
    "CollusionGroup",
    "RiskBin",
    "provisional_groups",
    "merge_groups",
    "assign_bins",
    "apply_synfpr_exclusion",
    "ThresholdTable",
    "FprInterval",
    "threshold_lookup",
    "calibrate_thresholds",
    "default_threshold_table",
    "wald_ci",
    "CopulaModel",
    "SynFprEstimate",
    "fit_copula",
    "sample_synthetic",
    "synthetic_fpr",
    "replicate_count",
    "RunConfig",
    "ReportBundle",
    "run_pipeline",
    "__version__",
]
