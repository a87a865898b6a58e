"""One stage's conic subproblem: model data, assembly, solve, cut data.

A StageModel couples linearly to the previous state:

    min  c(xi).x + theta                            (theta: cost-to-go epigraph)
    s.t. A(xi) x + B(xi) x_prev  = b(xi)
         G(xi) x + H(xi) x_prev <= h(xi)
         theta >= a_l + beta_l . x_state            (one row per cut)
         theta >= L
         ||w_j(x)||^2 <= 2 u_j(x) v_j(x)            (rotated cone blocks)
         lb <= x <= ub

plus, in regularized forward passes, lam * ||x_state - center||^2 added
through a rotated-cone epigraph scalar. Matrix entries may reference a
named field of the stage's realization record; everything else is
constant. Resolved data and assembled solver matrices are cached per
(realization, cut-pool state), so repeated solves only rewrite the RHS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .conic import DEFAULT_SETTINGS, SolverSettings, solve_conic
from .cuts import CutPool
from .errors import MissingDuals

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Coeff:
    """A number, optionally scaled by a realization field: value * xi[field]."""

    value: float
    field: str | None = None

    def resolve(self, xi: Mapping[str, float] | None) -> float:
        if self.field is None:
            return self.value
        if xi is None:
            raise KeyError(f"realization required to resolve field {self.field!r}")
        return self.value * float(xi[self.field])


@dataclass(frozen=True)
class AffExpr:
    """Constant-coefficient affine expression in the stage decisions."""

    lin: tuple[tuple[int, float], ...] = ()
    const: float = 0.0


@dataclass(frozen=True)
class ConeBlock:
    """Rotated second-order cone ||w||^2 <= 2 u v with u, v >= 0."""

    u: AffExpr
    v: AffExpr
    w: tuple[AffExpr, ...]


@dataclass(frozen=True)
class ProxTerm:
    """Quadratic pull toward a state-dimension center with weight lam."""

    center: np.ndarray
    weight: float

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("prox weight must be >= 0")


Triplet = tuple[int, int, Coeff]
VecEntry = tuple[int, Coeff]


@dataclass
class StageModel:
    """Immutable stage data; treat as read-only after construction."""

    name: str
    n_dec: int
    n_state_prev: int
    state_idx: tuple[int, ...]
    lb: np.ndarray
    ub: np.ndarray
    cost: tuple[VecEntry, ...] = ()
    n_eq: int = 0
    eq_A: tuple[Triplet, ...] = ()
    eq_B: tuple[Triplet, ...] = ()
    eq_b: tuple[VecEntry, ...] = ()
    n_in: int = 0
    in_G: tuple[Triplet, ...] = ()
    in_H: tuple[Triplet, ...] = ()
    in_h: tuple[VecEntry, ...] = ()
    cones: tuple[ConeBlock, ...] = ()

    def __post_init__(self):
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if self.lb.shape != (self.n_dec,) or self.ub.shape != (self.n_dec,):
            raise ValueError(f"{self.name}: bounds must have shape ({self.n_dec},)")
        if not (np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub))):
            raise ValueError(f"{self.name}: decision box must be bounded")
        if np.any(self.lb > self.ub):
            raise ValueError(f"{self.name}: empty decision box")
        if len(set(self.state_idx)) != len(self.state_idx):
            raise ValueError(f"{self.name}: duplicate state indices")
        if self.state_idx and not all(0 <= i < self.n_dec for i in self.state_idx):
            raise ValueError(f"{self.name}: state index out of range")
        for r, c, _ in self.eq_A:
            if not (0 <= r < self.n_eq and 0 <= c < self.n_dec):
                raise ValueError(f"{self.name}: eq_A entry out of range")
        for r, c, _ in self.eq_B:
            if not (0 <= r < self.n_eq and 0 <= c < self.n_state_prev):
                raise ValueError(f"{self.name}: eq_B entry out of range")
        for r, c, _ in self.in_G:
            if not (0 <= r < self.n_in and 0 <= c < self.n_dec):
                raise ValueError(f"{self.name}: in_G entry out of range")
        for r, c, _ in self.in_H:
            if not (0 <= r < self.n_in and 0 <= c < self.n_state_prev):
                raise ValueError(f"{self.name}: in_H entry out of range")
        self._resolved: dict = {}
        self._assembled: dict = {}

    @property
    def state_dim(self) -> int:
        return len(self.state_idx)

    def state_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        idx = list(self.state_idx)
        return self.lb[idx], self.ub[idx]

    # -- realization resolution ---------------------------------------------

    def resolve(self, xi: Mapping[str, float] | None) -> "_Resolved":
        key = None if xi is None else tuple(sorted(xi.items()))
        hit = self._resolved.get(key)
        if hit is None:
            hit = _Resolved(self, xi)
            self._resolved[key] = hit
        return hit


def _triplet_arrays(trips: Sequence[Triplet], xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not trips:
        return (np.empty(0, dtype=np.int64),) * 2 + (np.empty(0),)
    rows = np.array([t[0] for t in trips], dtype=np.int64)
    cols = np.array([t[1] for t in trips], dtype=np.int64)
    vals = np.array([t[2].resolve(xi) for t in trips], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite resolved matrix entry")
    return rows, cols, vals


def _vector(entries: Sequence[VecEntry], n: int, xi) -> np.ndarray:
    out = np.zeros(n)
    for r, cf in entries:
        out[r] += cf.resolve(xi)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite resolved vector entry")
    return out


def _dense(trips: Sequence[Triplet], shape, xi) -> np.ndarray:
    out = np.zeros(shape)
    for r, c, cf in trips:
        out[r, c] += cf.resolve(xi)
    return out


class _Resolved:
    """Stage data with the realization substituted in."""

    def __init__(self, model: StageModel, xi):
        self.model = model
        n, n_eq, n_in = model.n_dec, model.n_eq, model.n_in
        self.c = _vector(model.cost, n, xi)
        self.eq = _triplet_arrays(model.eq_A, xi)
        self.b_eq = _vector(model.eq_b, n_eq, xi)
        self.B = _dense(model.eq_B, (n_eq, model.n_state_prev), xi)
        self.ineq = _triplet_arrays(model.in_G, xi)
        self.h_in = _vector(model.in_h, n_in, xi)
        self.H = _dense(model.in_H, (n_in, model.n_state_prev), xi)


def _cone_rows(block: ConeBlock, row0: int):
    """SOC rows for ||w||^2 <= 2uv: [u+v, u-v, sqrt2*w] with b - Ax = expr."""
    rows, cols, vals, bs = [], [], [], []

    def emit(r, expr: AffExpr, scale: float):
        bs.append((r, scale * expr.const))
        for i, cf in expr.lin:
            rows.append(r)
            cols.append(i)
            vals.append(-scale * cf)

    u, v = block.u, block.v
    emit(row0, u, 1.0)
    emit(row0, v, 1.0)
    emit(row0 + 1, u, 1.0)
    emit(row0 + 1, v, -1.0)
    for j, w in enumerate(block.w):
        emit(row0 + 2 + j, w, _SQRT2)
    return rows, cols, vals, bs, 2 + len(block.w)


def quadratic_prox_encoding(
    lam: float, center: np.ndarray, state_idx: Sequence[int], s_index: int
) -> ConeBlock | None:
    """Epigraph cone for lam*||x_state - center||^2; None when lam == 0.

    Pairs with adding lam * s to the objective: ||x - c||^2 <= 2 s (1/2).
    """
    if lam == 0.0:
        return None
    w = tuple(
        AffExpr(((int(i), 1.0),), -float(center[k])) for k, i in enumerate(state_idx)
    )
    return ConeBlock(u=AffExpr(((s_index, 1.0),)), v=AffExpr((), 0.5), w=w)


class _Assembled:
    """Solver matrices for one (realization, pool state, prox?) combination."""

    def __init__(self, model: StageModel, res: _Resolved, pool: CutPool | None, with_prox: bool):
        n, n_eq, n_in = model.n_dec, model.n_eq, model.n_in
        self.res = res
        self.pool = pool
        self.n_cuts = len(pool) if pool is not None else 0
        self.theta_idx = n if pool is not None else None
        n_var = n + (1 if pool is not None else 0)
        self.sprox_idx = n_var if with_prox else None
        n_var += 1 if with_prox else 0
        self.n_var = n_var

        rows = [res.eq[0], res.ineq[0] + n_eq]
        cols = [res.eq[1], res.ineq[1]]
        vals = [res.eq[2], res.ineq[2]]
        b_parts = [res.b_eq, res.h_in]

        # box rows: x <= ub, -x <= -lb
        r0 = n_eq + n_in
        idx = np.arange(n)
        rows += [r0 + idx, r0 + n + idx]
        cols += [idx, idx]
        vals += [np.ones(n), -np.ones(n)]
        b_parts += [model.ub, -model.lb]
        r0 += 2 * n

        if pool is not None:
            ns = model.state_dim
            k = self.n_cuts
            if k:
                slopes = pool.slopes()
                rows.append(np.repeat(np.arange(k), ns) + r0)
                cols.append(np.tile(np.array(model.state_idx, dtype=np.int64), k))
                vals.append(slopes.ravel())
                rows.append(np.arange(k) + r0)
                cols.append(np.full(k, self.theta_idx, dtype=np.int64))
                vals.append(np.full(k, -1.0))
                b_parts.append(-pool.intercepts())
            # theta >= L
            rows.append(np.array([r0 + k], dtype=np.int64))
            cols.append(np.array([self.theta_idx], dtype=np.int64))
            vals.append(np.array([-1.0]))
            b_parts.append(np.array([-pool.lower_bound]))
            r0 += k + 1

        n_nonneg = r0 - n_eq

        soc_dims = []
        self.prox_w_slice = None
        cone_blocks = list(model.cones)
        if with_prox:
            prox_block = quadratic_prox_encoding(
                1.0, np.zeros(model.state_dim), model.state_idx, self.sprox_idx
            )
            cone_blocks.append(prox_block)
        for bi, block in enumerate(cone_blocks):
            cr, cc, cv, cb, dim = _cone_rows(block, r0)
            rows.append(np.array(cr, dtype=np.int64))
            cols.append(np.array(cc, dtype=np.int64))
            vals.append(np.array(cv))
            bv = np.zeros(dim)
            for r, val in cb:
                bv[r - r0] += val
            b_parts.append(bv)
            if with_prox and bi == len(cone_blocks) - 1:
                self.prox_w_slice = slice(r0 + 2, r0 + dim)
            soc_dims.append(dim)
            r0 += dim

        m = r0
        self.A = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m, n_var),
        )
        self.b_base = np.concatenate(b_parts)
        q = np.zeros(n_var)
        q[:n] = res.c
        if self.theta_idx is not None:
            q[self.theta_idx] = 1.0
        self.q_base = q
        self.cones = [("zero", n_eq), ("nonneg", n_nonneg)] + [("soc", d) for d in soc_dims]
        self.n_eq, self.n_in = n_eq, n_in


@dataclass
class StageSolution:
    """Primal/dual results of one stage solve.

    `value` is the cut-grade objective c.x + theta: it never includes
    the prox quadratic. `slope_prev` is B'nu + H'mu, a subgradient of
    the stage value in the incoming state at the solved point.
    """

    decisions: np.ndarray
    state: np.ndarray
    stage_cost: float
    theta: float
    value: float
    eq_duals: np.ndarray
    in_duals: np.ndarray
    slope_prev: np.ndarray
    status: str
    regularized: bool


def _assembled_for(model: StageModel, res: _Resolved, xi, pool, with_prox: bool) -> _Assembled:
    key = (
        None if xi is None else tuple(sorted(xi.items())),
        None if pool is None else id(pool),
        with_prox,
    )
    hit = model._assembled.get(key)
    n_cuts = len(pool) if pool is not None else 0
    if hit is None or hit.n_cuts != n_cuts or hit.res is not res:
        hit = _Assembled(model, res, pool, with_prox)
        model._assembled[key] = hit
    return hit


def solve_stage(
    model: StageModel,
    x_prev,
    xi: Mapping[str, float] | None = None,
    cost_to_go: CutPool | None = None,
    prox: ProxTerm | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> StageSolution:
    """Solve one stage subproblem; see the module docstring for the form."""
    res = model.resolve(xi)
    with_prox = prox is not None and prox.weight > 0.0
    if with_prox:
        slb, sub = model.state_bounds()
        c = np.asarray(prox.center, dtype=float)
        if c.shape != (model.state_dim,):
            raise ValueError(f"{model.name}: prox center has wrong dimension")
        if np.any(c < slb - 1e-9) or np.any(c > sub + 1e-9):
            raise ValueError(f"{model.name}: prox center outside the state box")
    asm = _assembled_for(model, res, xi, cost_to_go, with_prox)

    b = asm.b_base.copy()
    if model.n_state_prev:
        xp = np.asarray(x_prev, dtype=float)
        if xp.shape != (model.n_state_prev,):
            raise ValueError(
                f"{model.name}: x_prev has shape {xp.shape}, expected ({model.n_state_prev},)"
            )
        if model.n_eq:
            b[: model.n_eq] -= res.B @ xp
        if model.n_in:
            b[model.n_eq : model.n_eq + model.n_in] -= res.H @ xp
    q = asm.q_base
    if with_prox:
        q = q.copy()
        q[asm.sprox_idx] = prox.weight
        b[asm.prox_w_slice] = -_SQRT2 * np.asarray(prox.center, dtype=float)

    sol = solve_conic(q, asm.A, b, asm.cones, settings, context=model.name)
    x = sol.x[: model.n_dec]
    theta = float(sol.x[asm.theta_idx]) if asm.theta_idx is not None else 0.0
    stage_cost = float(res.c @ x)
    nu = sol.z[: model.n_eq]
    mu = sol.z[model.n_eq : model.n_eq + model.n_in]
    if model.n_state_prev:
        slope = res.B.T @ nu + res.H.T @ mu
    else:
        slope = np.zeros(0)
    return StageSolution(
        decisions=x,
        state=x[list(model.state_idx)],
        stage_cost=stage_cost,
        theta=theta,
        value=stage_cost + theta,
        eq_duals=nu,
        in_duals=mu,
        slope_prev=slope,
        status=sol.status,
        regularized=with_prox,
    )


def cut_from_solution(model: StageModel, solution: StageSolution) -> tuple[float, np.ndarray]:
    """Cut data (theta, beta) for a single realization at the solved point."""
    if solution.regularized:
        raise ValueError("cuts must come from non-regularized solves (backward pass only)")
    if solution.eq_duals is None or solution.in_duals is None:
        raise MissingDuals(f"{model.name}: solution carries no duals")
    return solution.value, solution.slope_prev


# -- JSON serialization ------------------------------------------------------


def _coeff_to_list(cf: Coeff):
    return [cf.value] if cf.field is None else [cf.value, cf.field]


def _coeff_from_list(item) -> Coeff:
    return Coeff(float(item[0]), item[1] if len(item) > 1 else None)


def _trips_to_list(trips):
    return [[r, c] + _coeff_to_list(cf) for r, c, cf in trips]


def _trips_from_list(items):
    return tuple((int(i[0]), int(i[1]), _coeff_from_list(i[2:])) for i in items)


def _vec_to_list(entries):
    return [[r] + _coeff_to_list(cf) for r, cf in entries]


def _vec_from_list(items):
    return tuple((int(i[0]), _coeff_from_list(i[1:])) for i in items)


def _expr_to_dict(e: AffExpr):
    return {"lin": [[i, v] for i, v in e.lin], "const": e.const}


def _expr_from_dict(d) -> AffExpr:
    return AffExpr(tuple((int(i), float(v)) for i, v in d["lin"]), float(d["const"]))


def stage_model_to_dict(m: StageModel) -> dict:
    return {
        "name": m.name,
        "n_dec": m.n_dec,
        "n_state_prev": m.n_state_prev,
        "state": list(m.state_idx),
        "lb": [float(v) for v in m.lb],
        "ub": [float(v) for v in m.ub],
        "cost": _vec_to_list(m.cost),
        "eq": {
            "rows": m.n_eq,
            "A": _trips_to_list(m.eq_A),
            "B": _trips_to_list(m.eq_B),
            "b": _vec_to_list(m.eq_b),
        },
        "ineq": {
            "rows": m.n_in,
            "G": _trips_to_list(m.in_G),
            "H": _trips_to_list(m.in_H),
            "h": _vec_to_list(m.in_h),
        },
        "cones": [
            {
                "u": _expr_to_dict(c.u),
                "v": _expr_to_dict(c.v),
                "w": [_expr_to_dict(w) for w in c.w],
            }
            for c in m.cones
        ],
    }


def stage_model_from_dict(d: Mapping) -> StageModel:
    return StageModel(
        name=d["name"],
        n_dec=int(d["n_dec"]),
        n_state_prev=int(d["n_state_prev"]),
        state_idx=tuple(int(i) for i in d["state"]),
        lb=np.asarray(d["lb"], dtype=float),
        ub=np.asarray(d["ub"], dtype=float),
        cost=_vec_from_list(d["cost"]),
        n_eq=int(d["eq"]["rows"]),
        eq_A=_trips_from_list(d["eq"]["A"]),
        eq_B=_trips_from_list(d["eq"]["B"]),
        eq_b=_vec_from_list(d["eq"]["b"]),
        n_in=int(d["ineq"]["rows"]),
        in_G=_trips_from_list(d["ineq"]["G"]),
        in_H=_trips_from_list(d["ineq"]["H"]),
        in_h=_vec_from_list(d["ineq"]["h"]),
        cones=tuple(
            ConeBlock(
                u=_expr_from_dict(c["u"]),
                v=_expr_from_dict(c["v"]),
                w=tuple(_expr_from_dict(w) for w in c["w"]),
            )
            for c in d["cones"]
        ),
    )
