"""Thin wrapper over the Clarabel interior-point solver.

Problems are passed in the standard conic form

    min  q.x   s.t.  A x + s = b,  s in K,

where K is a product of a zero cone (equalities), a nonnegative cone
(inequalities) and second-order cones. Rotated cones are mapped to
plain second-order cones by the callers.

Dual convention (verified against finite differences): for a row block
written as A x + s = b, the returned dual z satisfies q + A'z = 0 with
z >= 0 on nonnegative rows, i.e. z is the usual Lagrange multiplier of
"row <= b" constraints, and dV/db = -z.
"""

from __future__ import annotations

from dataclasses import dataclass

import clarabel
import numpy as np
import scipy.sparse as sp

from .errors import Infeasible, SolverNumericalFailure, Unbounded


@dataclass(frozen=True)
class SolverSettings:
    """Subproblem solve tolerances; the algorithmic layers assume duals
    accurate to roughly `feas_tol` relative."""

    feas_tol: float = 1e-10
    gap_tol: float = 1e-10
    max_iter: int = 200
    verbose: bool = False

    def to_clarabel(self) -> "clarabel.DefaultSettings":
        s = clarabel.DefaultSettings()
        s.tol_feas = self.feas_tol
        s.tol_gap_abs = self.gap_tol
        s.tol_gap_rel = self.gap_tol
        s.max_iter = self.max_iter
        s.verbose = self.verbose
        return s


DEFAULT_SETTINGS = SolverSettings()


@dataclass
class ConicSolution:
    x: np.ndarray
    z: np.ndarray
    objective: float
    status: str


# Cone descriptors: ("zero", m) | ("nonneg", m) | ("soc", dim)
def _clarabel_cones(cones):
    out = []
    for kind, m in cones:
        if m <= 0:
            continue
        if kind == "zero":
            out.append(clarabel.ZeroConeT(m))
        elif kind == "nonneg":
            out.append(clarabel.NonnegativeConeT(m))
        elif kind == "soc":
            out.append(clarabel.SecondOrderConeT(m))
        else:
            raise ValueError(f"unknown cone kind {kind!r}")
    return out


_OK = {"Solved", "AlmostSolved"}


def solve_conic(
    q: np.ndarray,
    A: sp.csc_matrix,
    b: np.ndarray,
    cones,
    settings: SolverSettings = DEFAULT_SETTINGS,
    context: str = "",
) -> ConicSolution:
    n = q.shape[0]
    P = sp.csc_matrix((n, n))
    clarabel_cones = _clarabel_cones(cones)
    attempt = settings
    status = ""
    # degenerate LPs occasionally stall at the tightest tolerance; retry
    # with a small relaxation before declaring a numerical failure
    for relax in (1.0, 100.0, 10_000.0):
        if relax != 1.0:
            attempt = SolverSettings(
                feas_tol=min(settings.feas_tol * relax, 1e-8),
                gap_tol=min(settings.gap_tol * relax, 1e-8),
                max_iter=settings.max_iter,
                verbose=settings.verbose,
            )
        solver = clarabel.DefaultSolver(P, q, A, b, clarabel_cones, attempt.to_clarabel())
        sol = solver.solve()
        status = str(sol.status)
        if status in _OK:
            return ConicSolution(
                x=np.asarray(sol.x),
                z=np.asarray(sol.z),
                objective=float(sol.obj_val),
                status="optimal",
            )
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            raise Infeasible(f"subproblem infeasible{': ' + context if context else ''}")
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            raise Unbounded(f"subproblem unbounded{': ' + context if context else ''}")
    raise SolverNumericalFailure(
        f"solver returned {status}{': ' + context if context else ''}"
    )
