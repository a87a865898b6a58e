"""Brute-force ground truth: extensive-form solves of small trees.

One decision copy per scenario-tree node; nonanticipativity holds by
construction through the tree indexing. Used by tests (cut validity,
convergence targets) and the CLI `oracle` command; guarded by a node
budget against accidental exponential blowup.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .conic import DEFAULT_SETTINGS, SolverSettings, solve_conic
from .errors import TreeTooLarge
from .stage import StageModel, _cone_rows
from .tree import ScenarioLattice

NodeKey = tuple[int, tuple[int, ...]]  # (stage, atom indices since the subtree root)


@dataclass
class _Node:
    key: NodeKey
    stage: int
    parent: NodeKey | None
    xi: Mapping[str, float]
    prob: float
    offset: int = 0


def _subtree_nodes(
    lattice: ScenarioLattice, first_stage: int, node_budget: int
) -> list[_Node]:
    horizon = lattice.stage_count
    count = 0
    width = 1
    for t in range(first_stage, horizon + 1):
        width *= lattice.atoms(t)
        count += width
    if count > node_budget:
        raise TreeTooLarge(f"{count} nodes exceed the budget of {node_budget}")

    nodes: list[_Node] = []
    if first_stage == 1:
        nodes.append(_Node((1, ()), 1, None, lattice.realization(1, 0), 1.0))
        level = [nodes[0]]
        start = 2
    else:
        level = []
        for j in range(lattice.atoms(first_stage)):
            node = _Node(
                (first_stage, (j,)),
                first_stage,
                None,
                lattice.realization(first_stage, j),
                float(lattice.probabilities[first_stage - 1][j]),
            )
            nodes.append(node)
            level.append(node)
        start = first_stage + 1
    for t in range(start, horizon + 1):
        nxt = []
        for parent in level:
            for j in range(lattice.atoms(t)):
                node = _Node(
                    (t, parent.key[1] + (j,)),
                    t,
                    parent.key,
                    lattice.realization(t, j),
                    parent.prob * float(lattice.probabilities[t - 1][j]),
                )
                nodes.append(node)
                nxt.append(node)
        level = nxt
    return nodes


class _ExtensiveProgram:
    """Assembles one conic program over a node set."""

    def __init__(
        self,
        stage_models: Sequence[StageModel],
        nodes: list[_Node],
        root_state: np.ndarray,
    ):
        self.nodes = nodes
        self.by_key = {n.key: n for n in nodes}
        self.models = {n.key: stage_models[n.stage - 1] for n in nodes}
        self.root_state = np.asarray(root_state, dtype=float)

        n_var = 0
        for n in nodes:
            n.offset = n_var
            n_var += self.models[n.key].n_dec
        self.n_var = n_var
        self.q = np.zeros(n_var)

        self.zero_r, self.zero_c, self.zero_v, self.zero_b = [], [], [], []
        self.nn_r, self.nn_c, self.nn_v, self.nn_b = [], [], [], []
        self.soc = []  # (rows, cols, vals, b, dim) with local row 0
        self.n_zero = 0
        self.n_nonneg = 0

        for node in nodes:
            self._add_node(node)

    def _parent_state_cols(self, node: _Node, model: StageModel):
        if node.parent is None:
            return None
        parent = self.by_key[node.parent]
        pm = self.models[parent.key]
        return [parent.offset + i for i in pm.state_idx]

    def _add_node(self, node: _Node) -> None:
        model = self.models[node.key]
        res = model.resolve(node.xi)
        off = node.offset
        pcols = self._parent_state_cols(node, model)

        # Parent-state terms couple to the parent's copy when it is part
        # of the program, otherwise they shift the RHS (pinned root state).

        # equalities
        r0 = self.n_zero
        er, ec, ev = res.eq
        self.zero_r += list(er + r0)
        self.zero_c += list(ec + off)
        self.zero_v += list(ev)
        b_eq = res.b_eq.copy()
        if model.n_state_prev and node.parent is None:
            b_eq -= res.B @ self.root_state
        elif model.n_state_prev:
            rr, cc = np.nonzero(res.B)
            for r, c in zip(rr, cc):
                self.zero_r.append(r0 + int(r))
                self.zero_c.append(pcols[int(c)])
                self.zero_v.append(float(res.B[r, c]))
        self.zero_b += list(b_eq)
        self.n_zero += model.n_eq

        # inequalities + box
        r0 = self.n_nonneg
        ir, ic, iv = res.ineq
        self.nn_r += list(ir + r0)
        self.nn_c += list(ic + off)
        self.nn_v += list(iv)
        h = res.h_in.copy()
        if model.n_state_prev and node.parent is None:
            h -= res.H @ self.root_state
        elif model.n_state_prev:
            rr, cc = np.nonzero(res.H)
            for r, c in zip(rr, cc):
                self.nn_r.append(r0 + int(r))
                self.nn_c.append(pcols[int(c)])
                self.nn_v.append(float(res.H[r, c]))
        self.nn_b += list(h)
        r0 += model.n_in
        for i in range(model.n_dec):
            self.nn_r.append(r0 + i)
            self.nn_c.append(off + i)
            self.nn_v.append(1.0)
        self.nn_b += list(model.ub)
        r0 += model.n_dec
        for i in range(model.n_dec):
            self.nn_r.append(r0 + i)
            self.nn_c.append(off + i)
            self.nn_v.append(-1.0)
        self.nn_b += list(-model.lb)
        self.n_nonneg = r0 + model.n_dec

        for block in model.cones:
            rows, cols, vals, bs, dim = _cone_rows(block, 0)
            bv = np.zeros(dim)
            for r, val in bs:
                bv[r] += val
            self.soc.append(
                (
                    np.asarray(rows),
                    np.asarray(cols) + off,
                    np.asarray(vals, dtype=float),
                    bv,
                    dim,
                )
            )

        self.q[off : off + model.n_dec] += node.prob * res.c

    def add_nonneg_row(self, cols, vals, rhs) -> None:
        r = self.n_nonneg
        self.nn_r += [r] * len(cols)
        self.nn_c += list(cols)
        self.nn_v += [float(v) for v in vals]
        self.nn_b.append(float(rhs))
        self.n_nonneg += 1

    def add_vars(self, count: int) -> int:
        first = self.n_var
        self.n_var += count
        self.q = np.concatenate([self.q, np.zeros(count)])
        return first

    def solve(self, settings: SolverSettings):
        rows = [np.asarray(self.zero_r, dtype=np.int64)]
        cols = [np.asarray(self.zero_c, dtype=np.int64)]
        vals = [np.asarray(self.zero_v, dtype=float)]
        b = [np.asarray(self.zero_b, dtype=float)]
        rows.append(np.asarray(self.nn_r, dtype=np.int64) + self.n_zero)
        cols.append(np.asarray(self.nn_c, dtype=np.int64))
        vals.append(np.asarray(self.nn_v, dtype=float))
        b.append(np.asarray(self.nn_b, dtype=float))
        cones = [("zero", self.n_zero), ("nonneg", self.n_nonneg)]
        r0 = self.n_zero + self.n_nonneg
        for sr, sc, sv, sb, dim in self.soc:
            rows.append(sr + r0)
            cols.append(sc)
            vals.append(sv)
            b.append(sb)
            cones.append(("soc", dim))
            r0 += dim
        A = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(r0, self.n_var),
        )
        return solve_conic(self.q, A, np.concatenate(b), cones, settings, context="extensive")


def solve_extensive_risk_neutral(
    lattice: ScenarioLattice,
    stage_models: Sequence[StageModel],
    *,
    x0,
    node_budget: int = 10_000,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> tuple[float, dict[NodeKey, np.ndarray]]:
    """Probability-weighted deterministic equivalent over the whole tree."""
    nodes = _subtree_nodes(lattice, 1, node_budget)
    prog = _ExtensiveProgram(stage_models, nodes, np.asarray(x0, dtype=float))
    sol = prog.solve(settings)
    decisions = {
        n.key: sol.x[n.offset : n.offset + prog.models[n.key].n_dec] for n in nodes
    }
    return sol.objective, decisions


def solve_extensive_risk_averse(
    lattice: ScenarioLattice,
    stage_models: Sequence[StageModel],
    lam: float,
    alpha: float,
    *,
    x0,
    node_budget: int = 10_000,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> float:
    """Nested mean-AV@R recursion as one convex program.

    Child recourse values become epigraph scalars v_m; each internal
    node aggregates them through (1-lam)*E + lam*AV@R_alpha in the
    Rockafellar-Uryasev form (scalars u, s_m >= v_m - u). Monotonicity
    of the composition makes the epigraph relaxations tight.
    """
    if not 0.0 <= lam <= 1.0 or not 0.0 < alpha <= 1.0:
        raise ValueError("need lam in [0,1] and alpha in (0,1]")
    nodes = _subtree_nodes(lattice, 1, node_budget)
    prog = _ExtensiveProgram(stage_models, nodes, np.asarray(x0, dtype=float))
    # Wipe the probability-weighted objective: risk nesting replaces it.
    prog.q[:] = 0.0

    horizon = lattice.stage_count
    children: dict[NodeKey, list[_Node]] = {}
    for n in nodes:
        if n.parent is not None:
            children.setdefault(n.parent, []).append(n)

    v_idx: dict[NodeKey, int] = {}
    r_idx: dict[NodeKey, int] = {}
    for n in nodes:
        if n.stage >= 2:
            v_idx[n.key] = prog.add_vars(1)
        if n.stage < horizon:
            r_idx[n.key] = prog.add_vars(1)

    # v_n >= c_n.x_n + R_n  ->  c.x + R - v <= 0
    for n in nodes:
        if n.stage < 2:
            continue
        model = prog.models[n.key]
        res = model.resolve(n.xi)
        cols = [n.offset + i for i in range(model.n_dec) if res.c[i] != 0.0]
        vals = [res.c[i] for i in range(model.n_dec) if res.c[i] != 0.0]
        if n.stage < horizon:
            cols.append(r_idx[n.key])
            vals.append(1.0)
        cols.append(v_idx[n.key])
        vals.append(-1.0)
        prog.add_nonneg_row(cols, vals, 0.0)

    degenerate = lam == 0.0 or alpha == 1.0
    for n in nodes:
        if n.stage >= horizon:
            continue
        kids = children[n.key]
        probs = [lattice.probabilities[n.stage][k.key[1][-1]] for k in kids]
        if degenerate:
            cols = [v_idx[k.key] for k in kids] + [r_idx[n.key]]
            vals = [p for p in probs] + [-1.0]
            prog.add_nonneg_row(cols, vals, 0.0)
        else:
            u = prog.add_vars(1)
            s0 = prog.add_vars(len(kids))
            for j, k in enumerate(kids):
                # v_m - u - s_m <= 0
                prog.add_nonneg_row([v_idx[k.key], u, s0 + j], [1.0, -1.0, -1.0], 0.0)
                # s_m >= 0
                prog.add_nonneg_row([s0 + j], [-1.0], 0.0)
            cols = [v_idx[k.key] for k in kids] + [u] + [s0 + j for j in range(len(kids))]
            vals = (
                [(1.0 - lam) * p for p in probs]
                + [lam]
                + [lam * p / alpha for p in probs]
            )
            cols.append(r_idx[n.key])
            vals.append(-1.0)
            prog.add_nonneg_row(cols, vals, 0.0)

    root = nodes[0]
    model = prog.models[root.key]
    res = model.resolve(root.xi)
    prog.q[root.offset : root.offset + model.n_dec] = res.c
    if horizon >= 2:
        prog.q[r_idx[root.key]] = 1.0
    sol = prog.solve(settings)
    return sol.objective


def evaluate_cost_to_go(
    lattice: ScenarioLattice,
    stage_models: Sequence[StageModel],
    t: int,
    x_pinned,
    *,
    node_budget: int = 10_000,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> float:
    """Exact risk-neutral Q_t at a pinned incoming state (subtree solve)."""
    horizon = lattice.stage_count
    if t == horizon + 1:
        return 0.0
    if not 2 <= t <= horizon:
        raise ValueError(f"t must be in 2..{horizon + 1}")
    nodes = _subtree_nodes(lattice, t, node_budget)
    prog = _ExtensiveProgram(stage_models, nodes, np.asarray(x_pinned, dtype=float))
    sol = prog.solve(settings)
    return sol.objective
