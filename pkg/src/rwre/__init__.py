"""Workbench for one-dimensional random walks in random environment:
exact quenched hitting-time and position laws on certified truncated
lattices, moment recursions with their closed-form averages, seeded Monte
Carlo oracles, and experiments measuring how fast the quenched laws approach
the Gaussian.
"""

from .environments import (
    Beta,
    Degenerate,
    EnvDistribution,
    EnvironmentWindow,
    RegimeReport,
    TwoPoint,
    UniformInterval,
    classify_regime,
    distribution_from_config,
    distribution_from_shorthand,
    regime_report,
    sample_environment,
    solve_kappa,
)
from .errors import (
    HorizonError,
    NumericError,
    ParameterError,
    RangeError,
    RegimeError,
    RwreError,
)
from .exact import (
    KolmogorovReport,
    LatticeCdf,
    abs_third_central_moment,
    abs_third_prefix,
    crossing_time_small_pmf,
    first_passage_cdf,
    first_passage_survival,
    hitting_site_for_level,
    kolmogorov_distance_T,
    kolmogorov_distance_X,
    position_pmf,
    ruin_probability,
    running_max_cdf,
)
from .experiments import (
    BerryEsseenReport,
    FluctuationResult,
    MartingaleCheckReport,
    RateExperimentConfig,
    RateExperimentResult,
    TheoryRate,
    TransferReport,
    berry_esseen_bound_eval,
    certified_window,
    martingale_identity_check,
    mean_fluctuation_experiment,
    rate_experiment,
    theory_rate,
    transfer_check,
    variance_fluctuation_experiment,
)
from .moments import (
    LawConstants,
    QuenchedMomentTable,
    centering_Zn,
    ensemble_site_moments,
    law_constants,
    moment_tables,
    stationary_moment_series,
    third_moment_series,
    truncation_control,
)
from .montecarlo import (
    BacktrackEstimate,
    SimBatch,
    Sigma0Estimate,
    annealed_sigma0_estimate,
    annealed_sigma0_exact,
    backtrack_probability,
    dkw_epsilon,
    ecdf_distance,
    simulate_hitting_time,
    simulate_position,
    wilson_interval,
)

__version__ = "0.1.0"
