"""Stochastic drivers: SDDP / SDDP-REG (sampled) and full-tree SREDA.

Each iteration samples a scenario, runs a (possibly regularized)
forward pass along it against the previous iteration's cut pools, then
walks backward solving every child realization of the visited nodes
against the already-updated pools, aggregating the children through the
risk measure into a single cut. The first-stage approximate value is a
deterministic, nondecreasing bound; the statistical bound on the policy
comes from fresh forward simulations.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .conic import DEFAULT_SETTINGS, SolverSettings
from .cuts import CutPool
from .errors import TreeTooLarge
from .reddp import (
    IterationRecord,
    ProxScheme,
    SolveReport,
    _make_pools,
    penalty_weight,
    prox_center,
    scheme_name,
)
from .risk import RiskSpec, aggregate, expectation
from .stage import ProxTerm, StageModel, cut_from_solution, solve_stage
from .tree import ScenarioLattice, SamplePath, sample_path

log = logging.getLogger("sddpreg")


@dataclass(frozen=True)
class GapStopping:
    """Stop when the simulated statistical gap drops under `threshold`."""

    threshold: float = 0.05
    n_sim: int = 500
    confidence: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("gap threshold must be in (0,1)")
        if self.n_sim < 2:
            raise ValueError("n_sim must be >= 2")
        if not 0.5 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0.5,1)")


@dataclass(frozen=True)
class FixedIterations:
    iterations: int = 50

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iteration budget must be >= 1")


@dataclass(frozen=True)
class StochasticConfig:
    scheme: ProxScheme = ProxScheme("PREV", "ZERO")
    stopping: GapStopping | FixedIterations = GapStopping()
    paths_per_iteration: int = 1
    seed: int = 0
    max_iter: int = 500
    simulate_every: int = 1
    node_budget: int = 10_000
    settings: SolverSettings = DEFAULT_SETTINGS

    def __post_init__(self):
        if self.paths_per_iteration < 1:
            raise ValueError("paths_per_iteration must be >= 1")
        if self.simulate_every < 1:
            raise ValueError("simulate_every must be >= 1")


@dataclass
class PolicySimulation:
    """Sampled policy values with a one-sided normal-approximation bound."""

    values: np.ndarray
    mean: float
    stderr: float
    confidence: float
    bound: float
    sense: str

    @classmethod
    def from_values(cls, values: np.ndarray, confidence: float, sense: str) -> "PolicySimulation":
        mean = float(values.mean())
        stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
        z = NormalDist().inv_cdf(confidence)
        # internal values are minimization costs: the cautious side is up;
        # for max-sense models the reported bound is the negated value.
        bound = mean + z * stderr
        return cls(values, mean, stderr, confidence, bound, sense)

    def reported_mean(self) -> float:
        return -self.mean if self.sense == "max" else self.mean

    def reported_bound(self) -> float:
        return -self.bound if self.sense == "max" else self.bound


def _forward_pass(
    models: Sequence[StageModel],
    lattice: ScenarioLattice,
    pools,
    path: SamplePath,
    x0: np.ndarray,
    k: int,
    scheme: ProxScheme | None,
    history,
    settings: SolverSettings,
) -> tuple[list[np.ndarray], float]:
    horizon = len(models)
    states = [x0]
    total = 0.0
    for t in range(1, horizon + 1):
        xi = lattice.realization(t, path.index_at(t))
        prox = None
        if scheme is not None:
            lam = penalty_weight(scheme, t, k, horizon)
            if lam > 0.0:
                prox = ProxTerm(prox_center(scheme, t, k, history[t]), lam)
        sol = solve_stage(models[t - 1], states[-1], xi, pools[t + 1], prox, settings)
        states.append(sol.state)
        total += sol.stage_cost
    return states, total


def _backward_pass(
    models: Sequence[StageModel],
    lattice: ScenarioLattice,
    pools,
    states: Sequence[np.ndarray],
    risk_spec: RiskSpec,
    k: int,
    settings: SolverSettings,
) -> None:
    horizon = len(models)
    for t in range(horizon, 1, -1):
        x_prev = states[t - 1]
        values, slopes = [], []
        for j in range(lattice.atoms(t)):
            xi = lattice.realization(t, j)
            sol = solve_stage(models[t - 1], x_prev, xi, pools[t + 1], None, settings)
            theta_j, beta_j = cut_from_solution(models[t - 1], sol)
            values.append(theta_j)
            slopes.append(beta_j)
        rho, weights = aggregate(values, lattice.probs(t), risk_spec)
        beta = np.tensordot(weights, np.stack(slopes), axes=1)
        pools[t].add_cut(rho, beta, x_prev, k)


def _first_stage_bound(models, lattice, pools, x0, settings) -> float:
    sol = solve_stage(models[0], x0, lattice.realization(1, 0), pools[2], None, settings)
    return sol.value


def simulate_policy(
    lattice: ScenarioLattice,
    stage_models: Sequence[StageModel],
    cut_pools,
    n_sim: int,
    seed,
    *,
    x0,
    sense: str = "min",
    confidence: float = 0.95,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> PolicySimulation:
    """Run n_sim fresh unregularized forward passes against frozen pools."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float)
    values = np.empty(n_sim)
    for i in range(n_sim):
        path = sample_path(lattice, rng)
        _, total = _forward_pass(
            stage_models, lattice, cut_pools, path, x0, 1, None, None, settings
        )
        values[i] = total
    return PolicySimulation.from_values(values, confidence, sense)


def _stochastic_gap(lower: float, sim: PolicySimulation, sense: str) -> float | None:
    """(Ub - Lb)/Ub in the paper's max-reporting convention; None if undefined."""
    if sense == "max":
        ub, lb = -lower, -sim.bound
    else:
        ub, lb = sim.bound, lower
    if ub <= 0.0:
        return None
    return (ub - lb) / ub


def run_sddp(
    lattice: ScenarioLattice,
    stage_models: Sequence[StageModel],
    risk_spec: RiskSpec = expectation(),
    config: StochasticConfig = StochasticConfig(),
    *,
    x0,
    lower_bounds: Sequence[float],
    initial_cuts: Sequence | None = None,
    sense: str = "min",
    variant: str = "",
) -> SolveReport:
    """Sampled-forward SDDP / SDDP-REG (the default stochastic mode)."""
    horizon = len(stage_models)
    if lattice.stage_count != horizon:
        raise ValueError("lattice and stage model horizons differ")
    x0 = np.asarray(x0, dtype=float)
    settings = config.settings
    pools = _make_pools(stage_models, lower_bounds, initial_cuts)
    history: list[list[np.ndarray]] = [[] for _ in range(horizon + 1)]
    rng = np.random.default_rng(config.seed)
    report = SolveReport(
        sense=sense,
        variant=variant or scheme_name(config.scheme, stochastic=True),
        seed=config.seed,
    )

    fixed = isinstance(config.stopping, FixedIterations)
    limit = config.stopping.iterations if fixed else config.max_iter

    for k in range(1, limit + 1):
        t0 = time.perf_counter()
        paths = [sample_path(lattice, rng) for _ in range(config.paths_per_iteration)]
        all_states = []
        sampled_value = 0.0
        for p, path in enumerate(paths):
            states, total = _forward_pass(
                stage_models, lattice, pools, path, x0, k, config.scheme, history, settings
            )
            all_states.append(states)
            if p == 0:
                sampled_value = total
        for t in range(1, horizon + 1):
            history[t].append(all_states[0][t])
        t1 = time.perf_counter()

        for states in all_states:
            _backward_pass(stage_models, lattice, pools, states, risk_spec, k, settings)
        lower = _first_stage_bound(stage_models, lattice, pools, x0, settings)
        t2 = time.perf_counter()

        upper = float("nan")
        gap = float("nan")
        stop = False
        if not fixed and k % config.simulate_every == 0:
            sim = simulate_policy(
                lattice,
                stage_models,
                pools,
                config.stopping.n_sim,
                np.random.SeedSequence([config.seed, 9176, k]),
                x0=x0,
                sense=sense,
                confidence=config.stopping.confidence,
                settings=settings,
            )
            report.simulation = sim
            upper = sim.bound
            g = _stochastic_gap(lower, sim, sense)
            if g is None:
                if "nonpositive_upper_bound" not in report.notes:
                    report.notes.append("nonpositive_upper_bound")
                log.warning("it %d: gap undefined (nonpositive upper bound)", k)
            else:
                gap = g
                stop = g < config.stopping.threshold
        report.records.append(
            IterationRecord(k, lower, upper, gap, 1e3 * (t1 - t0), 1e3 * (t2 - t1))
        )
        log.info("it %d: lb=%.10g stat=%.10g gap=%.4g", k, lower, upper, gap)
        report.trajectory = all_states[0][1:]
        if stop:
            report.termination = "gap"
            break
    else:
        report.termination = "iteration_budget" if fixed else "iteration_limit"

    report.pools = pools
    report.cut_counts = {t: len(pools[t]) for t in pools}
    return report


def run_sreda_fulltree(
    lattice: ScenarioLattice,
    stage_models: Sequence[StageModel],
    risk_spec: RiskSpec = expectation(),
    config: StochasticConfig = StochasticConfig(),
    *,
    x0,
    lower_bounds: Sequence[float],
    initial_cuts: Sequence | None = None,
    sense: str = "min",
    variant: str = "",
) -> SolveReport:
    """Theoretical full-tree forward variant: decisions at every node.

    The forward pass solves every child of every node, with prox-center
    and penalty shared per stage; the backward pass then cuts along one
    sampled scenario exactly as the sampled driver does.
    """
    horizon = len(stage_models)
    if lattice.node_count() > config.node_budget:
        raise TreeTooLarge(
            f"{lattice.node_count()} nodes exceed the budget of {config.node_budget}"
        )
    x0 = np.asarray(x0, dtype=float)
    settings = config.settings
    pools = _make_pools(stage_models, lower_bounds, initial_cuts)
    history: list[list[np.ndarray]] = [[] for _ in range(horizon + 1)]
    rng = np.random.default_rng(config.seed)
    report = SolveReport(
        sense=sense, variant=variant or "SREDA", seed=config.seed
    )

    fixed = isinstance(config.stopping, FixedIterations)
    limit = config.stopping.iterations if fixed else config.max_iter

    for k in range(1, limit + 1):
        t0 = time.perf_counter()
        # level[t] maps path prefix (j_2..j_t) -> (state, cumulative cost)
        level: dict[tuple[int, ...], tuple[np.ndarray, float]] = {(): (x0, 0.0)}
        levels = [level]
        for t in range(1, horizon + 1):
            lam = penalty_weight(config.scheme, t, k, horizon)
            prox = None
            if lam > 0.0:
                prox = ProxTerm(prox_center(config.scheme, t, k, history[t]), lam)
            nxt: dict[tuple[int, ...], tuple[np.ndarray, float]] = {}
            for prefix, (xprev, cost) in levels[t - 1].items():
                for j in range(lattice.atoms(t)):
                    xi = lattice.realization(t, j)
                    sol = solve_stage(
                        stage_models[t - 1], xprev, xi, pools[t + 1], prox, settings
                    )
                    key = prefix + (j,) if t >= 2 else prefix
                    nxt[key] = (sol.state, cost + sol.stage_cost)
            levels.append(nxt)
        t1 = time.perf_counter()

        path = sample_path(lattice, rng)
        states = [x0]
        for t in range(1, horizon + 1):
            prefix = tuple(path.indices[: max(t - 1, 0)])
            states.append(levels[t][prefix][0])
        for t in range(1, horizon + 1):
            history[t].append(states[t])
        _backward_pass(stage_models, lattice, pools, states, risk_spec, k, settings)
        lower = _first_stage_bound(stage_models, lattice, pools, x0, settings)
        t2 = time.perf_counter()

        upper = float("nan")
        gap = float("nan")
        stop = False
        if not fixed and k % config.simulate_every == 0:
            sim = simulate_policy(
                lattice,
                stage_models,
                pools,
                config.stopping.n_sim,
                np.random.SeedSequence([config.seed, 9176, k]),
                x0=x0,
                sense=sense,
                confidence=config.stopping.confidence,
                settings=settings,
            )
            report.simulation = sim
            upper = sim.bound
            g = _stochastic_gap(lower, sim, sense)
            if g is not None:
                gap = g
                stop = g < config.stopping.threshold
            elif "nonpositive_upper_bound" not in report.notes:
                report.notes.append("nonpositive_upper_bound")
        report.records.append(
            IterationRecord(k, lower, upper, gap, 1e3 * (t1 - t0), 1e3 * (t2 - t1))
        )
        report.trajectory = states[1:]
        if stop:
            report.termination = "gap"
            break
    else:
        report.termination = "iteration_budget" if fixed else "iteration_limit"

    report.pools = pools
    report.cut_counts = {t: len(pools[t]) for t in pools}
    return report
