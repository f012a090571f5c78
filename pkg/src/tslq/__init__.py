"""Thompson sampling for adaptive linear-quadratic control."""

__version__ = "0.1.0"

from .agents import (
    AgentFactory,
    CeController,
    EpisodeState,
    Ofu1dController,
    OracleController,
    Trigger,
    TsAgent,
    TsConfig,
    ofu_select,
    oracle_controller,
    project_to_grid,
    tau_cbrt,
    ts_sample,
    ts_step,
)
from .analysis import (
    BoundReport,
    OptimismReport,
    RegretDecomposition,
    ScalingFit,
    decompose_regret,
    estimate_optimism,
    fit_regret_exponent,
    fit_slope,
    gaussian_cdf_monotonicity_check,
    optimism_lower_bound,
    poincare_check_1d,
    theory_bound_report,
    worst_case_center,
)
from .env import (
    BoundedStateEvent,
    Environment,
    RegretTrace,
    bounded_state_event,
    episode_census,
    replicate,
    rollout,
)
from .errors import *  # noqa: F401,F403
from .lq import (
    AdmissibleSet,
    CostMatrices,
    LqParams,
    RiccatiSolution,
    admissible_grid,
    admissible_set_constants,
    average_cost_1d,
    grad_J,
    gradient_inequality_check,
    is_admissible,
    riccati_residual,
    solve_riccati,
)
from .rls import (
    ConfidenceParams,
    RlsState,
    beta,
    gamma,
    rls_coverage_experiment,
    rls_update,
    self_normalized_sum,
)
