"""Shared toy instances: scalar growth chains and small growth trees."""

import numpy as np
import pytest

from sddpreg.stage import Coeff, StageModel
from sddpreg.tree import build_lattice, deterministic_lattice


def growth_stage(t, ub, terminal, name="chain"):
    """x_t = r * x_{t-1} with box [0, ub]; terminal stages pay -x_t."""
    return StageModel(
        name=f"{name}_t{t}",
        n_dec=1,
        n_state_prev=1,
        state_idx=(0,),
        lb=np.zeros(1),
        ub=np.array([float(ub)]),
        cost=((0, Coeff(-1.0)),) if terminal else (),
        n_eq=1,
        eq_A=((0, 0, Coeff(1.0)),),
        eq_B=((0, 0, Coeff(-1.0, "r")),),
    )


def free_first_stage(ub=1.0, name="chain"):
    """x_1 in [0, ub], no coupling, no stage cost."""
    return StageModel(
        name=f"{name}_t1",
        n_dec=1,
        n_state_prev=1,
        state_idx=(0,),
        lb=np.zeros(1),
        ub=np.array([float(ub)]),
    )


@pytest.fixture
def toy_chain():
    """T=3 deterministic chain: pick x1 in [0,1], grow 1.1 twice, pay -x3.

    Optimal value -1.21 at x1 = 1.
    """
    models = [
        free_first_stage(1.0),
        growth_stage(2, 2.0, terminal=False),
        growth_stage(3, 2.0, terminal=True),
    ]
    lattice = deterministic_lattice([{"r": 1.0}, {"r": 1.1}, {"r": 1.1}])
    bounds = [-10.0, -10.0, 0.0]
    return models, lattice, bounds


def growth_tree(T=3, atoms=(0.9, 1.2), probs=None, ub=4.0):
    """Stochastic growth tree: x_t = r x_{t-1}, r drawn per stage; pay -x_T."""
    if probs is None:
        probs = [1.0 / len(atoms)] * len(atoms)
    models = [free_first_stage(1.0, name="tree")]
    for t in range(2, T + 1):
        models.append(growth_stage(t, ub, terminal=(t == T), name="tree"))
    reals = [[{"r": 1.0}]] + [[{"r": float(a)} for a in atoms] for _ in range(T - 1)]
    plist = [[1.0]] + [list(probs) for _ in range(T - 1)]
    lattice = build_lattice(reals, plist)
    bounds = [-float(ub) * 4] * (T - 1) + [0.0]
    return models, lattice, bounds


@pytest.fixture
def tiny_tree():
    """T=3, two-point growth tree; optimal value -(E r)^2 = -1.1025 at x1=1."""
    return growth_tree()
