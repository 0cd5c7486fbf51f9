"""Synthetic difference-in-differences estimation and placebo-study tooling.

The package covers the full workflow for balanced panels with block
treatment: load and validate (`panel`), solve simplex-constrained unit and
time weights (`solver`), estimate effects four ways (`estimators`,
`completion`), attach bootstrap / jackknife / placebo variances
(`inference`), and calibrate latent-factor generators for Monte Carlo
placebo studies (`dgp`, `experiments`, `surrogate`).  The `sdidlab` CLI
exposes the same workflow as subcommands.
"""

from ._backend import BACKEND
from .completion import cross_validate_penalty, mc_estimate, soft_impute
from .dgp import (
    AssignmentFit,
    DgpSpec,
    NonstationaryError,
    calibrate_dgp,
    decompose_additive,
    fit_ar2_covariance,
    fit_assignment,
    fit_low_rank,
    load_state_laws,
    simulate_panel,
)
from .estimators import (
    CollinearityError,
    Estimate,
    FixedEffects,
    InfluenceTable,
    adjusted_outcomes,
    did,
    did_weights,
    sc,
    sdid,
    sdid_weights,
    weighted_double_difference,
    weighted_twfe_regress,
)
from .experiments import (
    SimulationReport,
    aggregate_draws,
    run_experiment,
    simulate_draws,
)
from .inference import (
    JackknifeUndefinedError,
    VarianceEstimate,
    bootstrap_variance,
    confidence_interval,
    jackknife_variance,
    lambda_generalization_diagnostic,
    placebo_variance,
)
from .panel import (
    BlockDesign,
    CovariateSet,
    DesignError,
    Panel,
    PanelFormatError,
    block_treatment_matrix,
    design_from_matrix,
    load_panel,
    load_wide,
    validate_block,
)
from .solver import (
    ConvergenceError,
    EmptyDonorError,
    InsufficientPrePeriodsError,
    SimplexLsProblem,
    WeightSet,
    compute_zeta,
    objective_value,
    sc_weights,
    solve_simplex_ls,
    time_weights,
    unit_weights,
)

__version__ = "0.1.0"
