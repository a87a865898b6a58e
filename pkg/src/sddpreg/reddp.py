"""Deterministic DDP / regularized DDP driver.

Forward passes may carry a vanishing quadratic penalty toward a
prox-center built from earlier trial points; backward passes are always
unregularized and build one cut per stage at the trial state. DDP is
the zero-penalty special case.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .conic import DEFAULT_SETTINGS, SolverSettings
from .cuts import CutPool
from .errors import EmptyHistory
from .stage import ProxTerm, StageModel, cut_from_solution, solve_stage

log = logging.getLogger("sddpreg")

CENTER_RULES = ("PREV", "AVG", "WEIGHTED")
PENALTY_RULES = ("ZERO", "REG1", "REG2")


@dataclass(frozen=True)
class ProxScheme:
    """Prox-center rule plus penalty schedule (Table-1 style variants)."""

    center_rule: str = "PREV"
    penalty_rule: str = "ZERO"
    rho: float | None = None
    gamma: Callable[[int, int, int], float] | None = None  # WEIGHTED: (t, k, j) -> weight

    def __post_init__(self):
        if self.center_rule not in CENTER_RULES:
            raise ValueError(f"unknown center rule {self.center_rule!r}")
        if self.penalty_rule not in PENALTY_RULES:
            raise ValueError(f"unknown penalty rule {self.penalty_rule!r}")
        if self.penalty_rule == "REG1":
            if self.rho is None or not 0.0 < self.rho < 1.0:
                raise ValueError("REG1 requires 0 < rho < 1")
        if self.center_rule == "WEIGHTED" and self.gamma is None:
            raise ValueError("WEIGHTED requires a gamma weight function")

    @property
    def is_zero(self) -> bool:
        return self.penalty_rule == "ZERO"


DDP_SCHEME = ProxScheme("PREV", "ZERO")


def penalty_weight(scheme: ProxScheme, t: int, k: int, horizon: int) -> float:
    """Penalty lambda_{t,k}; always 0 at the last stage and first iteration."""
    if t == horizon or k == 1 or scheme.penalty_rule == "ZERO":
        return 0.0
    if scheme.penalty_rule == "REG1":
        return scheme.rho**k
    return 1.0 / (k * k)


def prox_center(scheme: ProxScheme, t: int, k: int, trial_history: Sequence[np.ndarray]) -> np.ndarray:
    """Prox-center from trials x_t^1..x_t^{k-1}; convexity keeps it feasible."""
    if k < 2 or len(trial_history) < k - 1:
        raise EmptyHistory(f"prox center at k={k} needs {k - 1} trials")
    hist = trial_history[: k - 1]
    if scheme.center_rule == "PREV":
        return hist[-1]
    if scheme.center_rule == "AVG":
        return np.mean(hist, axis=0)
    weights = np.array([scheme.gamma(t, k, j) for j in range(1, k)], dtype=float)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("WEIGHTED gamma must be nonnegative with positive sum")
    return np.tensordot(weights, np.stack(hist), axes=1) / weights.sum()


@dataclass
class IterationRecord:
    iteration: int
    lower: float
    upper: float
    gap: float
    forward_ms: float
    backward_ms: float


@dataclass
class SolveReport:
    """Per-iteration bounds in the internal minimization convention.

    For maximization models (`sense == "max"`) reporting flips: the
    first-stage bound becomes the upper bound and the trajectory /
    simulation bound the lower one; `reported_bounds` does the flip.
    """

    sense: str
    variant: str
    records: list[IterationRecord] = field(default_factory=list)
    trajectory: list[np.ndarray] = field(default_factory=list)
    termination: str = ""
    cut_counts: dict[int, int] = field(default_factory=dict)
    pools: dict[int, CutPool] = field(default_factory=dict)
    seed: int | None = None
    simulation: object | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def final_lower(self) -> float:
        return self.records[-1].lower

    def final_upper(self) -> float:
        return self.records[-1].upper

    def reported_bounds(self, rec: IterationRecord) -> tuple[float, float]:
        """(lower, upper) in the model's native sense."""
        if self.sense == "max":
            return -rec.upper, -rec.lower
        return rec.lower, rec.upper

    def first_stage_value(self) -> float:
        """Final first-stage bound in the native sense."""
        return -self.final_lower() if self.sense == "max" else self.final_lower()


def _make_pools(
    models: Sequence[StageModel],
    lower_bounds: Sequence[float],
    initial_cuts: Sequence | None = None,
) -> dict[int, CutPool]:
    """Pools 2..T+1 with constant bounds plus optional seeded valid cuts.

    A seeded cut (intercept, slope) is any affine minorant of the true
    cost-to-go (e.g. a worst-case growth bound); it makes the first
    forward pass informative instead of fully degenerate. Entries tagged
    iteration 0.
    """
    horizon = len(models)
    if len(lower_bounds) != horizon:
        raise ValueError(f"need {horizon} initial bounds (pools 2..T+1)")
    pools: dict[int, CutPool] = {}
    for t in range(2, horizon + 2):
        dim = models[t - 2].state_dim
        pools[t] = CutPool(stage=t, lower_bound=float(lower_bounds[t - 2]), state_dim=dim)
        if initial_cuts is not None and initial_cuts[t - 2] is not None:
            intercept, slope = initial_cuts[t - 2]
            pools[t].add_cut(float(intercept), np.asarray(slope, dtype=float),
                             np.zeros(dim), 0)
    return pools


def run_deterministic(
    stage_models: Sequence[StageModel],
    x0,
    scheme: ProxScheme,
    epsilon: float = 1e-6,
    max_iter: int = 500,
    *,
    lower_bounds: Sequence[float],
    initial_cuts: Sequence | None = None,
    realizations: Sequence | None = None,
    sense: str = "min",
    relative: bool = True,
    settings: SolverSettings = DEFAULT_SETTINGS,
    variant: str = "",
) -> SolveReport:
    """Iterate forward/backward passes until the gap closes.

    Stops when upper - lower <= epsilon * max(1, |upper|) (or a plain
    epsilon in absolute mode), or at `max_iter`. The returned trajectory
    is then an epsilon-optimal solution of the chain.
    """
    horizon = len(stage_models)
    x0 = np.asarray(x0, dtype=float)
    xis = list(realizations) if realizations is not None else [None] * horizon
    pools = _make_pools(stage_models, lower_bounds, initial_cuts)
    history: list[list[np.ndarray]] = [[] for _ in range(horizon + 1)]
    report = SolveReport(sense=sense, variant=variant or scheme_name(scheme))

    for k in range(1, max_iter + 1):
        t0 = time.perf_counter()
        states = [x0]
        upper = 0.0
        for t in range(1, horizon + 1):
            lam = penalty_weight(scheme, t, k, horizon)
            prox = None
            if lam > 0.0:
                prox = ProxTerm(prox_center(scheme, t, k, history[t]), lam)
            sol = solve_stage(
                stage_models[t - 1], states[-1], xis[t - 1], pools[t + 1], prox, settings
            )
            states.append(sol.state)
            upper += sol.stage_cost
        for t in range(1, horizon + 1):
            history[t].append(states[t])
        t1 = time.perf_counter()

        for t in range(horizon, 1, -1):
            sol = solve_stage(
                stage_models[t - 1], states[t - 1], xis[t - 1], pools[t + 1], None, settings
            )
            theta, beta = cut_from_solution(stage_models[t - 1], sol)
            pools[t].add_cut(theta, beta, states[t - 1], k)
        first = solve_stage(stage_models[0], x0, xis[0], pools[2], None, settings)
        lower = first.value
        t2 = time.perf_counter()

        gap = upper - lower
        report.records.append(
            IterationRecord(k, lower, upper, gap, 1e3 * (t1 - t0), 1e3 * (t2 - t1))
        )
        log.info("it %d: lb=%.10g ub=%.10g gap=%.3g", k, lower, upper, gap)
        tol = epsilon * max(1.0, abs(upper)) if relative else epsilon
        if gap <= tol:
            report.termination = "gap"
            break
    else:
        report.termination = "iteration_limit"

    report.trajectory = states[1:]
    report.pools = pools
    report.cut_counts = {t: len(pools[t]) for t in pools}
    return report


def scheme_name(scheme: ProxScheme, stochastic: bool = False) -> str:
    """Canonical variant name for a scheme (Table-1 naming)."""
    if scheme.is_zero:
        return "SDDP" if stochastic else "DDP"
    base = "SDDP-REG" if stochastic else "REDDP"
    pen = f"REG1-{scheme.rho:g}" if scheme.penalty_rule == "REG1" else "REG2"
    return f"{base}-{scheme.center_rule}-{pen}"


def parse_variant(name: str) -> tuple[bool, ProxScheme]:
    """Map a Table-1 variant name to (stochastic?, scheme)."""
    if name == "DDP":
        return False, ProxScheme("PREV", "ZERO")
    if name == "SDDP":
        return True, ProxScheme("PREV", "ZERO")
    for prefix, stochastic in (("REDDP-", False), ("SDDP-REG-", True)):
        if not name.startswith(prefix):
            continue
        rest = name[len(prefix) :]
        parts = rest.split("-")
        if len(parts) >= 2 and parts[0] in ("PREV", "AVG"):
            center = parts[0]
            if parts[1] == "REG2" and len(parts) == 2:
                return stochastic, ProxScheme(center, "REG2")
            if parts[1] == "REG1" and len(parts) == 3:
                try:
                    rho = float(parts[2])
                except ValueError:
                    break
                return stochastic, ProxScheme(center, "REG1", rho=rho)
        break
    raise ValueError(
        f"unknown variant {name!r}; expected DDP, SDDP, "
        "REDDP-{PREV|AVG}-{REG1-<rho>|REG2} or SDDP-REG-{PREV|AVG}-{REG1-<rho>|REG2}"
    )
