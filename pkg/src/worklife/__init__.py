"""Matched employer-employee panel analysis toolkit.

Pipeline pieces: panel loading and sample filters, a synthetic panel
simulator with known ground truth, mobility-graph connectivity, the
two-way fixed-effects wage regression with variance decomposition,
career-trajectory regressions with predicted margins and discounted
lifetime income, the four-way earnings-growth decomposition, inverse
probability weighting with block-bootstrap inference, and Charlson
comorbidity scoring. The ``worklife`` command line exposes each stage.
"""

__version__ = "0.1.0"

from .akm import (
    AkmFit,
    AkmSpec,
    VarianceDecomposition,
    cross_period_agreement,
    fit_akm,
    standardize_indices,
    variance_decomposition,
)
from .connectivity import MobilityGraph, UnionFind, build_graph, largest_connected_set
from .errors import (
    ConvergenceError,
    MissingInputError,
    PanelFormatError,
    ValidationError,
    WorklifeError,
)
from .health import (
    CharlsonTable,
    CciSeries,
    DiagnosisRecord,
    attach_cci_outcome,
    cci_at_cutoff,
    cci_series,
    default_charlson_table,
    load_charlson_table,
)
from .inference import (
    BootstrapResult,
    WeightModel,
    balance_report,
    block_bootstrap,
    estimate_ipw,
    holm_adjust,
)
from .mobility import (
    GrowthDecomposition,
    bootstrap_decomposition,
    decile_groups,
    decompose_growth,
)
from .panel import (
    EmploymentSpell,
    FilterSpec,
    Panel,
    PersonYearRecord,
    apply_akm_filters,
    apply_trajectory_filters,
    load_panel,
    make_panel,
    monthly_earnings,
    select_main_employer,
)
from .simulate import (
    GroundTruth,
    SimConfig,
    simulate_diagnoses,
    simulate_panel,
    theta_effect_for_correlation,
    years_edu_effect_for_r2,
)
from .trajectory import (
    MarginCurve,
    TrajectoryFit,
    TrajectorySpec,
    adjusted_person_means,
    attach_cci_column,
    attach_firm_quality,
    attach_job_count,
    binscatter,
    fit_trajectory,
    incremental_r2,
    index_quantile,
    lifetime_income,
    lifetime_margins,
    margin_gap,
    margins,
    person_table,
    wald_interactions,
)
