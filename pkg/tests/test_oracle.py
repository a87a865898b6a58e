import json

import numpy as np
import pytest

from sddpreg.errors import Infeasible, TreeTooLarge
from sddpreg.oracle import (
    evaluate_cost_to_go,
    solve_extensive_risk_averse,
    solve_extensive_risk_neutral,
)
from sddpreg.portfolio import (
    PortfolioParams,
    ReturnScenarios,
    build_direct_cost_models,
    generate_synthetic_returns,
)
from sddpreg.reddp import ProxScheme
from sddpreg.risk import expectation
from sddpreg.sddp import FixedIterations, StochasticConfig, run_sddp
from sddpreg.stage import solve_stage, stage_model_from_dict, stage_model_to_dict
from sddpreg.tree import lattice_from_dict, lattice_to_dict
from tests.conftest import growth_tree


def one_asset_two_scenario():
    # risky return in {1.2, 0.9} each 1/2 vs cash at 1.0, no costs
    params = PortfolioParams(
        n_assets=1, horizon=1, initial_holdings=[0.0, 1.0],
        sell_cost=0.0, buy_cost=0.0, position_limit=1.0, cash_return=1.0,
    )
    stages = [
        (np.ones((1, 2)), (1.0,)),
        (np.array([[1.2, 1.0], [0.9, 1.0]]), (0.5, 0.5)),
    ]
    return build_direct_cost_models(params, ReturnScenarios(tuple(stages)))


def test_two_scenario_invests_fully_since_mean_beats_cash():
    built = one_asset_two_scenario()
    value, decisions = solve_extensive_risk_neutral(
        built.lattice, built.stage_models, x0=built.x0
    )
    assert -value == pytest.approx(1.05, abs=1e-8)
    assert decisions[(1, ())][0] == pytest.approx(1.0, abs=1e-7)


def test_sddp_bound_reaches_extensive_value():
    built = one_asset_two_scenario()
    config = StochasticConfig(
        scheme=ProxScheme("PREV", "ZERO"), stopping=FixedIterations(3), seed=0
    )
    report = run_sddp(
        built.lattice, built.stage_models, expectation(), config,
        x0=built.x0, lower_bounds=built.initial_bounds, sense="max",
    )
    assert report.final_lower() == pytest.approx(-1.05, abs=1e-5)


def test_deterministic_chain_equals_chain_optimum(toy_chain):
    models, lattice, _ = toy_chain
    value, _ = solve_extensive_risk_neutral(lattice, models, x0=np.zeros(1))
    assert value == pytest.approx(-1.21, abs=1e-8)


def test_backward_substitution_matches_extensive():
    # grid over the single first-stage decision reproduces the optimum
    models, lattice, _ = growth_tree(T=2, atoms=(0.85, 1.25))
    value, _ = solve_extensive_risk_neutral(lattice, models, x0=np.zeros(1))
    grid = np.linspace(0.0, 1.0, 21)
    best = min(evaluate_cost_to_go(lattice, models, 2, np.array([x1])) for x1 in grid)
    assert value == pytest.approx(best, abs=1e-8)


def test_risk_averse_reductions():
    models, lattice, _ = growth_tree(T=2, atoms=(0.8, 1.3))
    neutral, _ = solve_extensive_risk_neutral(lattice, models, x0=np.zeros(1))
    assert solve_extensive_risk_averse(
        lattice, models, 0.0, 0.5, x0=np.zeros(1)
    ) == pytest.approx(neutral, abs=1e-8)
    assert solve_extensive_risk_averse(
        lattice, models, 0.7, 1.0, x0=np.zeros(1)
    ) == pytest.approx(neutral, abs=1e-8)


def test_risk_averse_two_scenario_hand_value():
    models, lattice, _ = growth_tree(T=2, atoms=(0.8, 1.3))
    value = solve_extensive_risk_averse(lattice, models, 0.5, 0.5, x0=np.zeros(1))
    # value = 0.5*mean + 0.5*worst of the child values at x1=1
    assert value == pytest.approx(0.5 * (-1.05) + 0.5 * (-0.8), abs=1e-8)


def test_terminal_cost_to_go_values(toy_chain):
    models, lattice, _ = toy_chain
    assert evaluate_cost_to_go(lattice, models, 4, np.array([0.7])) == 0.0
    q3 = evaluate_cost_to_go(lattice, models, 3, np.array([0.7]))
    direct = solve_stage(models[2], np.array([0.7]), lattice.realization(3, 0))
    assert q3 == pytest.approx(direct.value, abs=1e-8)


def test_cut_validity_against_cost_to_go(tiny_tree):
    models, lattice, bounds = tiny_tree
    config = StochasticConfig(
        scheme=ProxScheme("PREV", "REG2"), stopping=FixedIterations(6), seed=4
    )
    report = run_sddp(
        lattice, models, expectation(), config, x0=np.zeros(1), lower_bounds=bounds
    )
    rng = np.random.default_rng(0)
    for t in (2, 3):
        for _ in range(25):
            x = rng.uniform(0.0, 1.5, size=1)
            q = evaluate_cost_to_go(lattice, models, t, x)
            for cut in report.pools[t].cuts:
                c_val = cut.intercept + float(cut.slope @ x)
                assert c_val <= q + 1e-7 * max(1.0, abs(q))


def test_node_budget_guard():
    models, lattice, _ = growth_tree(T=6, atoms=(0.9, 1.0, 1.1))
    with pytest.raises(TreeTooLarge):
        solve_extensive_risk_neutral(lattice, models, x0=np.zeros(1), node_budget=100)


def test_infeasible_pinned_state():
    models, lattice, _ = growth_tree(T=3, atoms=(0.9, 1.2), ub=1.0)
    # state 2.0 grows beyond the stage box [0, 1] under r=1.2: infeasible
    with pytest.raises(Infeasible):
        evaluate_cost_to_go(lattice, models, 2, np.array([2.0]))


def test_oracle_invariant_under_serialization_round_trip():
    params = PortfolioParams(
        n_assets=2, horizon=2, initial_holdings=[0.0, 0.0, 1.0], position_limit=0.7
    )
    scen = generate_synthetic_returns(seed=8, n=2, T=2, M=2, drift=0.01, vol=0.08)
    built = build_direct_cost_models(params, scen)
    value, _ = solve_extensive_risk_neutral(built.lattice, built.stage_models, x0=built.x0)

    models_doc = json.loads(json.dumps([stage_model_to_dict(m) for m in built.stage_models]))
    lattice_doc = json.loads(json.dumps(lattice_to_dict(built.lattice)))
    models2 = [stage_model_from_dict(d) for d in models_doc]
    lattice2 = lattice_from_dict(lattice_doc)
    value2, _ = solve_extensive_risk_neutral(lattice2, models2, x0=built.x0)
    assert value2 == pytest.approx(value, abs=1e-9)
