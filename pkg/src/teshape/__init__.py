"""Competitive-equilibrium pricing and social shaping for transactive energy markets."""

__version__ = "0.1.0"

from .model import (
    BindingCondition,
    Custom,
    EquilibriumResult,
    Family,
    MarketInstance,
    ModelKind,
    PiecewiseLinear,
    Quadratic,
    ShapingQuery,
    ShapingVerdict,
    SolveMethod,
    UtilityParams,
    ValidationError,
    ValidationReport,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    save_instance,
    validate_instance,
)
from .solver import (
    AggregateDemand,
    BracketFailure,
    ConvergenceFailure,
    KktReport,
    SolverConfig,
    SolverError,
    pwl_best_response,
    quadratic_best_response,
    solve,
    solve_mtes_generic,
    solve_mtes_pwl,
    solve_mtes_quadratic,
    solve_mtes_st,
    verify_kkt,
)
from .shaping import (
    NotDifferentiable,
    check_homogeneous,
    check_pwl_set,
    check_quadratic_set,
    chi_theta_quadratic,
)
from .consensus import (
    AggregatorRun,
    CollectionError,
    CommGraph,
    ConsensusTrace,
    DisconnectedGraph,
    DistributedRun,
    NotConverged,
    run_aggregator,
    run_distributed,
)
from .experiments import (
    BoxStats,
    EmptyInput,
    ExperimentSpec,
    MonteCarloResult,
    box_stats,
    run_monte_carlo,
    run_satiation_sweep,
    sample_production,
    sample_pwl_params,
    sample_quadratic_params,
)

__all__ = [
    "AggregateDemand",
    "AggregatorRun",
    "BindingCondition",
    "BoxStats",
    "BracketFailure",
    "CollectionError",
    "CommGraph",
    "ConsensusTrace",
    "ConvergenceFailure",
    "Custom",
    "DisconnectedGraph",
    "DistributedRun",
    "EmptyInput",
    "EquilibriumResult",
    "ExperimentSpec",
    "Family",
    "KktReport",
    "MarketInstance",
    "ModelKind",
    "MonteCarloResult",
    "NotConverged",
    "NotDifferentiable",
    "PiecewiseLinear",
    "Quadratic",
    "ShapingQuery",
    "ShapingVerdict",
    "SolveMethod",
    "SolverConfig",
    "SolverError",
    "UtilityParams",
    "ValidationError",
    "ValidationReport",
    "box_stats",
    "check_homogeneous",
    "check_pwl_set",
    "check_quadratic_set",
    "chi_theta_quadratic",
    "instance_from_dict",
    "instance_to_dict",
    "load_instance",
    "pwl_best_response",
    "quadratic_best_response",
    "run_aggregator",
    "run_distributed",
    "run_monte_carlo",
    "run_satiation_sweep",
    "sample_production",
    "sample_pwl_params",
    "sample_quadratic_params",
    "save_instance",
    "solve",
    "solve_mtes_generic",
    "solve_mtes_pwl",
    "solve_mtes_quadratic",
    "solve_mtes_st",
    "validate_instance",
    "verify_kkt",
]
