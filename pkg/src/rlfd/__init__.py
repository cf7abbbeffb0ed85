"""Inverse-optimization apprenticeship learning for finite discounted MDPs."""

from rlfd.mdp import (
    FeasibilityReport,
    ForwardSolution,
    Mdp,
    OccupancyMeasure,
    Policy,
    ValueFunction,
    bellman_flow,
    bellman_flow_adjoint,
    certify_optimality,
    check_feasibility,
    mdp_from_json,
    mdp_to_json,
    occupancy_from_policy,
    policy_evaluation,
    policy_from_occupancy,
    solve_forward_optimal,
)
from rlfd.smd import (
    EstimatorBounds,
    RlfdProblem,
    RunRecord,
    SaddleIterate,
    SmdConfig,
    duality_gap_exact,
    estimator_bounds,
    lagrangian,
    run_smd_batch,
    run_smd_hull,
    run_smd_rlfd,
    step_sizes_from_theorem,
)

__version__ = "0.1.0"
