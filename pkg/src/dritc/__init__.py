"""Singly and doubly robust estimators for externally controlled single-arm
trials and unanchored indirect treatment comparisons."""

__version__ = "0.1.0"

from .data_model import (
    AggregateTarget,
    AnalysisConfig,
    BalanceSpec,
    BalanceTerm,
    BernoulliMarginal,
    Dataset,
    NormalMarginal,
    SubjectRecord,
    balance_matrix,
    eval_balance,
    load_config,
    load_ipd,
    target_from_ipd,
    write_ipd,
)
from .errors import (
    DataError,
    DegenerateOutcomeError,
    DritcError,
    GlmConvergenceError,
    InfeasibleBalanceError,
    NonOverlapError,
    SeparationError,
    UnboundedMeanError,
    UnstableBootstrapError,
)
from .estimators import (
    EstimateResult,
    EstimatorSpec,
    battery_specs,
    estimate_att,
    estimate_battery,
    estimate_dr,
    estimate_gcomp,
    estimate_iow,
    estimate_maic,
    estimate_naive,
    estimate_weighted_gcomp,
)
from .glm import GlmFit, Link, fit_bernoulli, link_forward, link_inverse, predict_mean
from .inference import (
    BootstrapConfig,
    IntervalResult,
    bootstrap,
    delta_se_logodds,
    se_decomposition,
    z_quantile,
)
from .pseudo_population import CopulaSpec, make_ad_dataset, simulate_profiles
from .simlab import (
    SCENARIOS,
    PerformanceReport,
    ScenarioConfig,
    generate_scenario,
    run_study,
    true_estimand,
)
from .weighting import (
    BalanceReport,
    FeasibilityResult,
    WeightSet,
    balance_report,
    effective_sample_size,
    entropy_balance,
    feasibility_check,
    iow_weights,
)
