"""Portfolio rebalancing stage models: direct costs and market impact.

Decisions per stage: end-of-stage positions x (n risky assets + cash),
sells y and buys z, plus the impact-cost block (q, g, l, s, v, w, r)
when market impact is on. The wealth maximization is negated into the
internal minimization convention, and all currency is normalized by the
initial budget so states are O(1); the impact coefficient rescales
exactly (m -> m * sqrt(budget)) and reported values scale back by
`value_scale`.

The terminal value of the final positions is folded into the last
stage's objective: the expected terminal return vector in the
risk-neutral case, an AV@R epigraph block over the terminal atoms in
the risk-averse one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conic import DEFAULT_SETTINGS, SolverSettings
from .errors import (
    InvalidParams,
    MalformedCsv,
    NonPositiveReturn,
    ScenarioShapeMismatch,
)
from .risk import RiskSpec, expectation
from .stage import AffExpr, Coeff, ConeBlock, StageModel, solve_stage
from .tree import ScenarioLattice, build_lattice


def _as_vector(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise InvalidParams(f"{name} must be a scalar or length-{n} vector")
    return arr


@dataclass(frozen=True)
class PortfolioParams:
    """Problem data; §-style defaults: 1e9 budget in cash, 6 assets,
    1% proportional costs, 0.2% cash return, 20% position caps."""

    n_assets: int = 6
    horizon: int = 48
    initial_holdings: np.ndarray | None = None
    sell_cost: float | np.ndarray = 0.01
    buy_cost: float | np.ndarray = 0.01
    position_limit: float | np.ndarray = 0.2
    cash_return: float = 1.002
    impact_cost: float | np.ndarray = 0.0
    maximize: bool = True

    def __post_init__(self):
        n = self.n_assets
        if n < 1 or self.horizon < 1:
            raise InvalidParams("need n_assets >= 1 and horizon >= 1")
        x0 = self.initial_holdings
        if x0 is None:
            x0 = np.zeros(n + 1)
            x0[-1] = 1e9
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (n + 1,) or np.any(x0 < 0) or x0.sum() <= 0:
            raise InvalidParams("initial holdings must be nonnegative with positive total")
        object.__setattr__(self, "initial_holdings", x0)
        eta = _as_vector(self.sell_cost, n, "sell_cost")
        nu = _as_vector(self.buy_cost, n, "buy_cost")
        if np.any(eta < 0) or np.any(eta >= 1) or np.any(nu < 0) or np.any(nu >= 1):
            raise InvalidParams("proportional costs must lie in [0,1)")
        object.__setattr__(self, "sell_cost", eta)
        object.__setattr__(self, "buy_cost", nu)
        u = _as_vector(self.position_limit, n, "position_limit")
        if np.any(u <= 0) or np.any(u > 1):
            raise InvalidParams("position limits must lie in (0,1]")
        object.__setattr__(self, "position_limit", u)
        if self.cash_return <= 0:
            raise InvalidParams("cash gross return must be positive")
        m = _as_vector(self.impact_cost, n, "impact_cost")
        if np.any(m < 0):
            raise InvalidParams("impact costs must be nonnegative")
        object.__setattr__(self, "impact_cost", m)

    @property
    def budget(self) -> float:
        return float(self.initial_holdings.sum())


@dataclass(frozen=True)
class ReturnScenarios:
    """Gross-return atoms for stages 1..T+1 (stage T+1 feeds the terminal value)."""

    stages: tuple[tuple[np.ndarray, tuple[float, ...]], ...]

    def __post_init__(self):
        mats = []
        for mat, probs in self.stages:
            mat = np.asarray(mat, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != len(probs):
                raise ScenarioShapeMismatch("each stage needs one probability per atom")
            if np.any(mat <= 0):
                raise NonPositiveReturn("gross returns must be > 0")
            mats.append(mat)
        widths = {m.shape[1] for m in mats}
        if len(widths) != 1:
            raise ScenarioShapeMismatch("stages disagree on the number of assets")
        object.__setattr__(
            self,
            "stages",
            tuple((m, tuple(float(p) for p in probs)) for m, (_, probs) in zip(mats, self.stages)),
        )

    @property
    def n_columns(self) -> int:
        return self.stages[0][0].shape[1]

    @property
    def horizon(self) -> int:
        return len(self.stages) - 1


def generate_synthetic_returns(
    seed: int,
    n: int,
    T: int,
    M: int,
    drift: float = 0.005,
    vol: float = 0.05,
    cash_return: float = 1.002,
) -> ReturnScenarios:
    """Lognormal gross returns exp(drift - vol^2/2 + vol*z), iid atoms.

    Stage 1 is the deterministic all-ones revaluation; stages 2..T+1
    each carry M uniform atoms.
    """
    if vol < 0:
        raise InvalidParams("vol must be >= 0")
    rng = np.random.default_rng(seed)
    stages = [(np.ones((1, n + 1)), (1.0,))]
    for _ in range(T):
        z = rng.standard_normal(size=(M, n))
        risky = np.exp(drift - 0.5 * vol * vol + vol * z)
        mat = np.hstack([risky, np.full((M, 1), cash_return)])
        stages.append((mat, tuple([1.0 / M] * M)))
    return ReturnScenarios(tuple(stages))


def load_returns_csv(
    path,
    horizon: int,
    atoms_per_stage: int | None = None,
    seed: int | None = None,
    cash_return: float = 1.002,
) -> ReturnScenarios:
    """Empirical scenarios from a returns CSV (header: date,asset_1..asset_n).

    Every stage reuses the empirical distribution: all rows with uniform
    probabilities when atoms_per_stage is None or equals the row count,
    otherwise a per-stage bootstrap of that many rows (seeded).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsv(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip().lower() != "date":
            raise MalformedCsv(f"{path}: header must be date,asset_1..asset_n")
        n = len(header) - 1
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n + 1:
                raise MalformedCsv(f"{path}:{lineno}: expected {n + 1} columns")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise MalformedCsv(f"{path}:{lineno}: {exc}") from None
            if any(v <= 0 for v in vals):
                raise NonPositiveReturn(f"{path}:{lineno}: gross returns must be > 0")
            rows.append(vals)
    if not rows:
        raise MalformedCsv(f"{path}: no data rows")
    data = np.asarray(rows)
    n_rows = data.shape[0]
    rng = np.random.default_rng(seed)
    stages = [(np.ones((1, n + 1)), (1.0,))]
    for _ in range(horizon):
        if atoms_per_stage is None or atoms_per_stage == n_rows:
            sample = data
        else:
            sample = data[rng.integers(0, n_rows, size=atoms_per_stage)]
        mat = np.hstack([sample, np.full((sample.shape[0], 1), cash_return)])
        stages.append((mat, tuple([1.0 / mat.shape[0]] * mat.shape[0])))
    return ReturnScenarios(tuple(stages))


@dataclass
class BuiltProblem:
    """Stage models plus the wiring the drivers need."""

    stage_models: list[StageModel]
    initial_bounds: list[float]
    initial_cuts: list
    lattice: ScenarioLattice
    x0: np.ndarray
    sense: str
    value_scale: float
    params: PortfolioParams
    risk_spec: RiskSpec
    kind: str

    @property
    def horizon(self) -> int:
        return len(self.stage_models)

    def realizations(self) -> list[dict]:
        """Per-stage realizations of a deterministic (M=1) instance."""
        if any(self.lattice.atoms(t) != 1 for t in range(1, self.horizon + 1)):
            raise ValueError("instance is not deterministic")
        return [dict(self.lattice.realization(t, 0)) for t in range(1, self.horizon + 1)]


def _field(i: int) -> str:
    return f"r{i + 1}"


def _check_scenarios(params: PortfolioParams, scenarios: ReturnScenarios) -> None:
    if scenarios.horizon != params.horizon:
        raise ScenarioShapeMismatch(
            f"scenarios cover {scenarios.horizon} stages, params want {params.horizon}"
        )
    if scenarios.n_columns != params.n_assets + 1:
        raise ScenarioShapeMismatch(
            f"scenarios have {scenarios.n_columns} columns, expected {params.n_assets + 1}"
        )
    if scenarios.stages[0][0].shape[0] != 1:
        raise ScenarioShapeMismatch("stage 1 must be deterministic (one atom)")


def _lattice(scenarios: ReturnScenarios, horizon: int) -> ScenarioLattice:
    reals, probs = [], []
    for t in range(horizon):
        mat, p = scenarios.stages[t]
        reals.append([{_field(i): float(v) for i, v in enumerate(row)} for row in mat])
        probs.append(list(p))
    return build_lattice(reals, probs)


def _growth_factors(scenarios: ReturnScenarios) -> np.ndarray:
    """Per-stage worst-case (largest) gross return, floored at 1."""
    return np.array([max(1.0, float(mat.max())) for mat, _ in scenarios.stages])


def _initial_bounds(params, scenarios, wbox: np.ndarray) -> list[float]:
    # Q_t >= -(max wealth of any state in the stage-(t-1) box, fully compounded)
    growth = _growth_factors(scenarios)
    T = params.horizon
    n1 = params.n_assets + 1
    bounds = []
    for t in range(2, T + 1):
        future = float(np.prod(growth[t - 1 :]))
        bounds.append(-n1 * wbox[t - 2] * future)
    bounds.append(0.0)  # pool T+1: terminal value folded into stage T
    return bounds


def _initial_cuts(params, scenarios):
    """Valid linear minorants: cost-to-go >= -(max future growth) * wealth.

    Seeding the pools with these makes the first forward pass aware of
    compounding and of cost bleed; without them the early stage
    subproblems are fully degenerate.
    """
    growth = _growth_factors(scenarios)
    T = params.horizon
    n1 = params.n_assets + 1
    cuts = []
    for t in range(2, T + 1):
        future = float(np.prod(growth[t - 1 :]))
        cuts.append((0.0, np.full(n1, -future)))
    cuts.append(None)  # pool T+1 is exactly zero
    return cuts


def _terminal_cost(params, scenarios, risk_spec, n_x, u_idx=None, s_idx=None):
    """Objective entries for the folded terminal value (internal min)."""
    mat, probs = scenarios.stages[params.horizon]
    p = np.asarray(probs)
    cost = []
    averse = risk_spec.kind == "mean_avar" and risk_spec.lam > 0 and risk_spec.alpha < 1
    if not averse:
        mean_ret = p @ mat
        for i in range(n_x):
            cost.append((i, Coeff(-float(mean_ret[i]))))
        return cost, 0
    lam, alpha = risk_spec.lam, risk_spec.alpha
    mean_ret = p @ mat
    for i in range(n_x):
        cost.append((i, Coeff(-(1.0 - lam) * float(mean_ret[i]))))
    cost.append((u_idx, Coeff(lam)))
    for j in range(mat.shape[0]):
        cost.append((s_idx + j, Coeff(lam * float(p[j]) / alpha)))
    return cost, mat.shape[0]


def build_direct_cost_models(
    params: PortfolioParams,
    scenarios: ReturnScenarios,
    risk_spec: RiskSpec = expectation(),
) -> BuiltProblem:
    """Stage models with proportional transaction costs (linear stages)."""
    _check_scenarios(params, scenarios)
    n, T = params.n_assets, params.horizon
    n1 = n + 1
    eta, nu, ulim = params.sell_cost, params.buy_cost, params.position_limit
    growth = _growth_factors(scenarios)
    wbox = 2.0 * np.cumprod(growth[:T])
    terminal_mat, terminal_p = scenarios.stages[T]
    averse = risk_spec.kind == "mean_avar" and risk_spec.lam > 0 and risk_spec.alpha < 1
    m_term = terminal_mat.shape[0] if averse else 0
    ubig = 4.0 * n1 * float(wbox[-1]) * growth[T]

    models = []
    for t in range(1, T + 1):
        w = wbox[t - 1]
        y0, z0 = n1, n1 + n
        n_dec = n1 + 2 * n
        u_idx = s_idx = None
        if t == T and averse:
            u_idx = n_dec
            s_idx = n_dec + 1
            n_dec += 1 + m_term

        eq_A, eq_B = [], []
        for i in range(n):
            eq_A += [(i, i, Coeff(1.0)), (i, y0 + i, Coeff(1.0)), (i, z0 + i, Coeff(-1.0))]
            eq_B.append((i, i, Coeff(-1.0, _field(i))))
        eq_A.append((n, n, Coeff(1.0)))
        for i in range(n):
            eq_A += [
                (n, y0 + i, Coeff(-(1.0 - float(eta[i])))),
                (n, z0 + i, Coeff(1.0 + float(nu[i]))),
            ]
        eq_B.append((n, n, Coeff(-1.0, _field(n))))

        in_G, in_H = [], []
        for i in range(n):
            in_G.append((i, y0 + i, Coeff(1.0)))
            in_H.append((i, i, Coeff(-1.0, _field(i))))
        for i in range(n):
            in_G.append((n + i, i, Coeff(1.0)))
            for j in range(n1):
                in_H.append((n + i, j, Coeff(-float(ulim[i]), _field(j))))
        n_in = 2 * n

        cost: list = []
        if t == T:
            cost, _ = _terminal_cost(params, scenarios, risk_spec, n1, u_idx, s_idx)
            if averse:
                for j in range(m_term):
                    for i in range(n1):
                        in_G.append((n_in + j, i, Coeff(-float(terminal_mat[j, i]))))
                    in_G.append((n_in + j, u_idx, Coeff(-1.0)))
                    in_G.append((n_in + j, s_idx + j, Coeff(-1.0)))
                n_in += m_term

        lb = np.zeros(n_dec)
        ub = np.full(n_dec, w)
        if t == T and averse:
            lb[u_idx], ub[u_idx] = -ubig, ubig
            lb[s_idx : s_idx + m_term] = 0.0
            ub[s_idx : s_idx + m_term] = 2.0 * ubig

        models.append(
            StageModel(
                name=f"direct_t{t}",
                n_dec=n_dec,
                n_state_prev=n1,
                state_idx=tuple(range(n1)),
                lb=lb,
                ub=ub,
                cost=tuple(cost),
                n_eq=n1,
                eq_A=tuple(eq_A),
                eq_B=tuple(eq_B),
                eq_b=(),
                n_in=n_in,
                in_G=tuple(in_G),
                in_H=tuple(in_H),
                in_h=(),
            )
        )

    budget = params.budget
    return BuiltProblem(
        stage_models=models,
        initial_bounds=_initial_bounds(params, scenarios, wbox),
        initial_cuts=_initial_cuts(params, scenarios),
        lattice=_lattice(scenarios, T),
        x0=params.initial_holdings / budget,
        sense="max" if params.maximize else "min",
        value_scale=budget,
        params=params,
        risk_spec=risk_spec,
        kind="direct",
    )


def build_market_impact_models(
    params: PortfolioParams,
    scenarios: ReturnScenarios,
    risk_spec: RiskSpec = expectation(),
) -> BuiltProblem:
    """Conic stage models with 3/2-power market impact charges.

    Per traded asset the charge q satisfies m*g^(3/2) <= q through the
    rotated-cone system l^2 <= 2 s q/m, w^2 <= 2 v r with l=v, s=w,
    r=1/8 and |g| <= l; assets with m == 0 degenerate to q = 0.
    """
    _check_scenarios(params, scenarios)
    n, T = params.n_assets, params.horizon
    n1 = n + 1
    ulim = params.position_limit
    m_norm = params.impact_cost * math.sqrt(params.budget)
    growth = _growth_factors(scenarios)
    wbox = 2.0 * np.cumprod(growth[:T])
    terminal_mat, _ = scenarios.stages[T]
    averse = risk_spec.kind == "mean_avar" and risk_spec.lam > 0 and risk_spec.alpha < 1
    m_term = terminal_mat.shape[0] if averse else 0
    ubig = 4.0 * n1 * float(wbox[-1]) * growth[T]

    models = []
    for t in range(1, T + 1):
        w = wbox[t - 1]
        gmax = 2.0 * w
        y0 = n1
        z0 = n1 + n
        q0 = n1 + 2 * n
        g0 = n1 + 3 * n
        l0 = n1 + 4 * n
        s0 = n1 + 5 * n
        v0 = n1 + 6 * n
        w0 = n1 + 7 * n
        r0 = n1 + 8 * n
        n_dec = n1 + 9 * n
        u_idx = s_idx = None
        if t == T and averse:
            u_idx = n_dec
            s_idx = n_dec + 1
            n_dec += 1 + m_term

        eq_A, eq_B, eq_b = [], [], []
        row = 0
        for i in range(n):
            eq_A += [(row, i, Coeff(1.0)), (row, y0 + i, Coeff(1.0)), (row, z0 + i, Coeff(-1.0))]
            eq_B.append((row, i, Coeff(-1.0, _field(i))))
            row += 1
        eq_A.append((row, n, Coeff(1.0)))
        for i in range(n):
            eq_A += [
                (row, y0 + i, Coeff(-1.0)),
                (row, z0 + i, Coeff(1.0)),
                (row, q0 + i, Coeff(1.0)),
            ]
        eq_B.append((row, n, Coeff(-1.0, _field(n))))
        row += 1
        for i in range(n):
            eq_A += [
                (row, g0 + i, Coeff(1.0)),
                (row, y0 + i, Coeff(-1.0)),
                (row, z0 + i, Coeff(-1.0)),
            ]
            row += 1
        cones = []
        for i in range(n):
            if m_norm[i] > 0.0:
                eq_A += [(row, l0 + i, Coeff(1.0)), (row, v0 + i, Coeff(-1.0))]
                row += 1
                eq_A += [(row, s0 + i, Coeff(1.0)), (row, w0 + i, Coeff(-1.0))]
                row += 1
                eq_A.append((row, r0 + i, Coeff(1.0)))
                eq_b.append((row, Coeff(0.125)))
                row += 1
                cones.append(
                    ConeBlock(
                        u=AffExpr(((s0 + i, 1.0),)),
                        v=AffExpr(((q0 + i, 1.0 / float(m_norm[i])),)),
                        w=(AffExpr(((l0 + i, 1.0),)),),
                    )
                )
                cones.append(
                    ConeBlock(
                        u=AffExpr(((v0 + i, 1.0),)),
                        v=AffExpr(((r0 + i, 1.0),)),
                        w=(AffExpr(((w0 + i, 1.0),)),),
                    )
                )
            else:
                eq_A.append((row, q0 + i, Coeff(1.0)))
                row += 1
        n_eq = row

        in_G, in_H = [], []
        row = 0
        for i in range(n):
            in_G.append((row, y0 + i, Coeff(1.0)))
            in_H.append((row, i, Coeff(-1.0, _field(i))))
            row += 1
        for i in range(n):
            in_G.append((row, i, Coeff(1.0)))
            for j in range(n1):
                in_H.append((row, j, Coeff(-float(ulim[i]), _field(j))))
            row += 1
        for i in range(n):
            if m_norm[i] > 0.0:
                in_G += [(row, g0 + i, Coeff(-1.0)), (row, l0 + i, Coeff(-1.0))]
                row += 1
                in_G += [(row, g0 + i, Coeff(1.0)), (row, l0 + i, Coeff(-1.0))]
                row += 1
        cost: list = []
        if t == T:
            cost, _ = _terminal_cost(params, scenarios, risk_spec, n1, u_idx, s_idx)
            if averse:
                for j in range(m_term):
                    for i in range(n1):
                        in_G.append((row, i, Coeff(-float(terminal_mat[j, i]))))
                    in_G.append((row, u_idx, Coeff(-1.0)))
                    in_G.append((row, s_idx + j, Coeff(-1.0)))
                    row += 1
        n_in = row

        lb = np.zeros(n_dec)
        ub = np.full(n_dec, w)
        sbound = 1.0 + math.sqrt(gmax)
        for i in range(n):
            ub[g0 + i] = gmax
            if m_norm[i] > 0.0:
                ub[q0 + i] = 2.0 * float(m_norm[i]) * gmax**1.5 + 1.0
                ub[l0 + i] = ub[v0 + i] = gmax
                ub[s0 + i] = ub[w0 + i] = sbound
                ub[r0 + i] = 1.0
            else:
                ub[q0 + i] = ub[l0 + i] = ub[v0 + i] = 0.0
                ub[s0 + i] = ub[w0 + i] = ub[r0 + i] = 0.0
        if t == T and averse:
            lb[u_idx], ub[u_idx] = -ubig, ubig
            ub[s_idx : s_idx + m_term] = 2.0 * ubig

        models.append(
            StageModel(
                name=f"impact_t{t}",
                n_dec=n_dec,
                n_state_prev=n1,
                state_idx=tuple(range(n1)),
                lb=lb,
                ub=ub,
                cost=tuple(cost),
                n_eq=n_eq,
                eq_A=tuple(eq_A),
                eq_B=tuple(eq_B),
                eq_b=tuple(eq_b),
                n_in=n_in,
                in_G=tuple(in_G),
                in_H=tuple(in_H),
                in_h=(),
                cones=tuple(cones),
            )
        )

    budget = params.budget
    return BuiltProblem(
        stage_models=models,
        initial_bounds=_initial_bounds(params, scenarios, wbox),
        initial_cuts=_initial_cuts(params, scenarios),
        lattice=_lattice(scenarios, T),
        x0=params.initial_holdings / budget,
        sense="max" if params.maximize else "min",
        value_scale=budget,
        params=params,
        risk_spec=risk_spec,
        kind="impact",
    )


def minimal_impact_charge(
    g: float, m: float, settings: SolverSettings = DEFAULT_SETTINGS
) -> float:
    """Minimal q feasible for the impact cone system at a fixed trade g.

    Serves as the reformulation check: the result must equal m*g^(3/2).
    """
    if g < 0 or m < 0:
        raise InvalidParams("g and m must be nonnegative")
    if m == 0.0 or g == 0.0:
        return 0.0
    q, l, s, v, wv, r = range(6)
    gmax = 2.0 * g
    lb = np.zeros(6)
    ub = np.array([2.0 * m * gmax**1.5 + 1.0, gmax, 1 + math.sqrt(gmax), gmax, 1 + math.sqrt(gmax), 1.0])
    model = StageModel(
        name="impact_min_q",
        n_dec=6,
        n_state_prev=0,
        state_idx=(),
        lb=lb,
        ub=ub,
        cost=((q, Coeff(1.0)),),
        n_eq=3,
        eq_A=(
            (0, l, Coeff(1.0)),
            (0, v, Coeff(-1.0)),
            (1, s, Coeff(1.0)),
            (1, wv, Coeff(-1.0)),
            (2, r, Coeff(1.0)),
        ),
        eq_b=((2, Coeff(0.125)),),
        n_in=2,
        in_G=((0, l, Coeff(-1.0)), (1, l, Coeff(-1.0))),
        in_h=((0, Coeff(float(g))), (1, Coeff(-float(g)))),
        cones=(
            ConeBlock(
                u=AffExpr(((s, 1.0),)),
                v=AffExpr(((q, 1.0 / m),)),
                w=(AffExpr(((l, 1.0),)),),
            ),
            ConeBlock(
                u=AffExpr(((v, 1.0),)),
                v=AffExpr(((r, 1.0),)),
                w=(AffExpr(((wv, 1.0),)),),
            ),
        ),
    )
    sol = solve_stage(model, np.zeros(0), None, None, None, settings)
    return sol.value
