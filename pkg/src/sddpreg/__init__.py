"""Regularized dual dynamic programming for multistage convex programs."""

from .conic import SolverSettings
from .cuts import Cut, CutPool, write_cuts_csv
from .oracle import (
    evaluate_cost_to_go,
    solve_extensive_risk_averse,
    solve_extensive_risk_neutral,
)
from .portfolio import (
    BuiltProblem,
    PortfolioParams,
    ReturnScenarios,
    build_direct_cost_models,
    build_market_impact_models,
    generate_synthetic_returns,
    load_returns_csv,
    minimal_impact_charge,
)
from .reddp import (
    ProxScheme,
    SolveReport,
    parse_variant,
    penalty_weight,
    prox_center,
    run_deterministic,
    scheme_name,
)
from .risk import RiskSpec, aggregate, avar_value_oracle, expectation, mean_avar
from .sddp import (
    FixedIterations,
    GapStopping,
    PolicySimulation,
    StochasticConfig,
    run_sddp,
    run_sreda_fulltree,
    simulate_policy,
)
from .stage import (
    AffExpr,
    Coeff,
    ConeBlock,
    ProxTerm,
    StageModel,
    StageSolution,
    cut_from_solution,
    quadratic_prox_encoding,
    solve_stage,
    stage_model_from_dict,
    stage_model_to_dict,
)
from .tree import (
    SamplePath,
    ScenarioLattice,
    build_lattice,
    deterministic_lattice,
    enumerate_leaf_scenarios,
    lattice_from_dict,
    lattice_to_dict,
    sample_path,
)

__all__ = [name for name in dir() if not name.startswith("_")]
