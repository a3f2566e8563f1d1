"""Sectional solver for merge/split dynamics on (0, 1] coupled to a
prescribed reservoir of sizes beyond 1.

The public surface re-exports the pieces most runs need: kernel and
reservoir factories, grid and state construction, the time integrators,
the stationary/entropy toolbox and the scenario loader.
"""

__version__ = "0.1.0"

from .errors import (
    CoagFragError,
    ConfigError,
    DomainError,
    FitError,
    InvalidScenarioError,
    PicardError,
    SingularProfileError,
    StiffnessError,
    UnboundedKernelError,
)
from .kernels import (
    BoundCheckReport,
    BoundedKernelParams,
    CoagKernel,
    FragKernel,
    TruncatedKernel,
    additive_coag,
    bound_form_coag,
    bounded_params,
    constant_coag,
    constant_frag,
    detailed_balance_frag,
    eval_coag,
    eval_frag,
    lower_form_coag,
    multiplicative_coag,
    product_frag,
    sum_power_frag,
    tabulated_coag,
    tabulated_frag,
    truncate,
    validate_bounds,
)
from .boundary import (
    BoundaryDatum,
    eval_C,
    eval_G,
    eval_g,
    exponential_reservoir,
    moment_M,
    power_exponential_reservoir,
    power_reservoir,
    uniform_moment,
    zero_reservoir,
)
from .state import (
    Grid,
    StateMeasure,
    TestFunction,
    Trajectory,
    build_grid,
    from_density,
    from_spikes,
    function_battery,
    load_state_csv,
    measure_below,
    moment_m,
    pair_test,
    piecewise_linear,
    save_state_csv,
)
from .operators import apply_A, apply_B, build_tables, rhs, weak_residual, weak_residual_series
from .solver import (
    ContractionParams,
    PicardResult,
    SolverConfig,
    budget_residual,
    contraction_params,
    picard_run,
    run,
    step,
)
from .analysis import (
    DecayFit,
    DetailedBalanceReport,
    DissipationRecord,
    EquilibriumProfile,
    check_detailed_balance,
    dissipation,
    entropy,
    entropy_balance,
    entropy_series,
    equilibrium_profile,
    f_infinity,
    fit_decay,
    gronwall_check,
    gronwall_envelope,
    negative_moment_ledger,
    small_size_check,
)
from .oracle import DiscreteSystem, discrete_rhs, integrate_discrete, quad_oracle
from .scenario import Scenario, builtin_scenario, load_scenario, resolve_scenario_path
