"""Nonparametric statistics, effect sizes, p-value special functions, and
questionnaire scoring."""
from .io import (
    MeasurementRow,
    blocked_matrix,
    grouped_by_condition,
    load_long_csv,
    measures,
    paired_by_phase,
    write_results_csv,
)
from .questionnaires import (
    ItemOutOfRange,
    QuestionnaireKind,
    QuestionnaireResponse,
    WrongItemCount,
    score_questionnaire,
)
from .rank_tests import (
    AllZeroDifferences,
    DegenerateGroups,
    NOutOfRange,
    PairwiseComparison,
    TestResult,
    TooFewRows,
    ZeroVariance,
    cohens_d_groups,
    cohens_d_paired,
    dunn_sidak_blocked,
    dunn_sidak_grouped,
    friedman,
    kruskal_wallis,
    ranks_with_ties,
    shapiro_wilk,
    sidak_adjust,
    wilcoxon_signed_rank,
)
from .special import InvalidArgument, chi2_sf, gamma_q, normal_cdf, normal_ppf, normal_sf

__all__ = [
    "AllZeroDifferences",
    "DegenerateGroups",
    "InvalidArgument",
    "ItemOutOfRange",
    "MeasurementRow",
    "NOutOfRange",
    "PairwiseComparison",
    "QuestionnaireKind",
    "QuestionnaireResponse",
    "TestResult",
    "TooFewRows",
    "WrongItemCount",
    "ZeroVariance",
    "blocked_matrix",
    "chi2_sf",
    "cohens_d_groups",
    "cohens_d_paired",
    "dunn_sidak_blocked",
    "dunn_sidak_grouped",
    "friedman",
    "gamma_q",
    "grouped_by_condition",
    "kruskal_wallis",
    "load_long_csv",
    "measures",
    "normal_cdf",
    "normal_ppf",
    "normal_sf",
    "paired_by_phase",
    "ranks_with_ties",
    "score_questionnaire",
    "shapiro_wilk",
    "sidak_adjust",
    "wilcoxon_signed_rank",
    "write_results_csv",
]
