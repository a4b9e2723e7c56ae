"""Belief-state base-stock policies for inventory systems with HMM-modulated demand."""
from .belief_grid import BeliefGrid, build_grid, nearest_grid_point, round_belief, simulate_belief_trajectory
from .config import ExperimentConfig
from .evaluation import (
    EvaluationReport,
    ExactBasestockPolicy,
    build_policy,
    evaluate_policy,
    evaluate_position_policy,
    optimality_gap_experiment,
)
from .hmm import (
    EmissionConvention,
    HiddenMarkovModel,
    ImpossibleObservationError,
    InvalidArgumentError,
    NonConvergenceError,
    Trajectory,
    baum_welch,
    filter_beliefs,
    forward_log_likelihood,
    lambda_update,
    sample_trajectory,
    sigma,
)
from .inventory import (
    InventoryModel,
    check_attainability,
    exact_basestock,
    monte_carlo_basestock,
    tau_demand_distribution,
)
from .solvers import (
    GridValueFunction,
    HeuristicPolicy,
    TabularMdp,
    build_grid_mdp,
    heuristic_action,
    information_relaxation_values,
    relaxation_lower_bound,
    solve_grid,
    value_iteration,
)
from .svm import BasestockClassifier, classify, partition_report, train_multiclass, train_ovr

__version__ = "0.1.0"
