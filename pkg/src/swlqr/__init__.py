"""Online data-driven LQR stabilization of unknown switched linear systems."""

from .data_window import (
    DataWindow,
    HankelMatrix,
    build_hankel,
    min_window_length,
    numerical_rank,
    pe_sample_count,
    push_sample,
    rank_condition_holds,
)
from .dd_lqr import (
    EqualityHandling,
    SdpProblem,
    SdpSolution,
    SolverOptions,
    SolverStatus,
    build_sdp,
    closed_loop_h2_cost,
    dare_lqr,
    gramian_lyapunov,
    least_squares_id,
    solve_dd_lqr,
    spectral_radius,
)
from .excitation import (
    ExcitationError,
    ExcitationPolicy,
    ExcitationReport,
    PolicyMode,
    epsilon_candidates,
    is_persistently_exciting,
    select_input,
)
from .scenario import (
    RunReport,
    ScenarioConfig,
    ScenarioError,
    bounds_command,
    lqr_check_command,
    parse_scenario,
    run_scenario,
)
from .stability import (
    FeasibilityTuple,
    StabilityConstants,
    build_feasibility_tuple,
    compute_stability_constants,
    discrete_lyapunov,
    dwell_bound,
    excitation_bound,
    gain_bound,
)
from .switched_plant import (
    ActuatorOutage,
    AdditiveStateFault,
    LinearMode,
    SwitchedPlant,
    SwitchingSchedule,
    TraceRecord,
    effective_mode,
    generate_dwell_schedule,
    plant_step,
    run_online_loop,
    seed_window_backward,
    seed_window_forward,
)

__version__ = "0.1.0"
