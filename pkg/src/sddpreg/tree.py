"""Stagewise-independent scenario lattice and path sampling.

The discrete process is stored as a recombining lattice: one list of
(realization, probability) atoms per stage. Stage 1 is deterministic
(a single atom). Stagewise independence makes nodes of the same stage
interchangeable, so path identity is just the tuple of per-stage atom
indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    EmptyStage,
    NonPositiveProbability,
    ProbabilitySumMismatch,
    TreeTooLarge,
)

Realization = Mapping[str, float]

_PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class SamplePath:
    """Atom indices (0-based) for stages 2..T; stage 1 is always atom 0."""

    indices: tuple[int, ...]

    def index_at(self, t: int) -> int:
        """Atom index for stage t (1-based stage numbering)."""
        if t == 1:
            return 0
        return self.indices[t - 2]


@dataclass(frozen=True)
class ScenarioLattice:
    """Per-stage realizations and probabilities of the discrete process."""

    realizations: tuple[tuple[Realization, ...], ...]
    probabilities: tuple[tuple[float, ...], ...]
    _cum: tuple[np.ndarray, ...] = field(repr=False, default=())

    @property
    def stage_count(self) -> int:
        return len(self.realizations)

    def atoms(self, t: int) -> int:
        """Number of realizations at stage t (1-based)."""
        return len(self.realizations[t - 1])

    def realization(self, t: int, j: int) -> Realization:
        return self.realizations[t - 1][j]

    def probs(self, t: int) -> np.ndarray:
        return np.asarray(self.probabilities[t - 1])

    def leaf_count(self) -> int:
        out = 1
        for t in range(2, self.stage_count + 1):
            out *= self.atoms(t)
        return out

    def node_count(self) -> int:
        """Total explicit tree nodes over stages 1..T."""
        total, level = 0, 1
        for t in range(1, self.stage_count + 1):
            level *= self.atoms(t)
            total += level
        return total


def build_lattice(
    per_stage_realizations: Sequence[Sequence[Realization]],
    per_stage_probabilities: Sequence[Sequence[float]],
) -> ScenarioLattice:
    """Validate and assemble a ScenarioLattice.

    Probabilities of each stage must be positive and sum to 1 within 1e-9;
    they are renormalized so the stored vectors sum to 1 exactly.
    """
    if len(per_stage_realizations) != len(per_stage_probabilities):
        raise ProbabilitySumMismatch(
            "realizations and probabilities must cover the same stages"
        )
    if not per_stage_realizations:
        raise EmptyStage("lattice needs at least one stage")
    if len(per_stage_realizations[0]) != 1:
        raise ValueError("stage 1 must have exactly one deterministic realization")

    reals, probs, cums = [], [], []
    for t0, (rs, ps) in enumerate(zip(per_stage_realizations, per_stage_probabilities)):
        t = t0 + 1
        if len(rs) == 0:
            raise EmptyStage(f"stage {t} has no realizations")
        if len(rs) != len(ps):
            raise ProbabilitySumMismatch(
                f"stage {t}: {len(rs)} realizations but {len(ps)} probabilities"
            )
        p = np.asarray(ps, dtype=float)
        if np.any(p <= 0):
            raise NonPositiveProbability(f"stage {t}: probabilities must be > 0")
        s = float(p.sum())
        if abs(s - 1.0) > _PROB_SUM_TOL:
            raise ProbabilitySumMismatch(f"stage {t}: probabilities sum to {s!r}")
        p = p / s
        reals.append(tuple(dict(r) for r in rs))
        probs.append(tuple(float(v) for v in p))
        cums.append(np.cumsum(p))
    return ScenarioLattice(tuple(reals), tuple(probs), tuple(cums))


def deterministic_lattice(realizations: Sequence[Realization]) -> ScenarioLattice:
    """Lattice with a single atom per stage (deterministic chain)."""
    return build_lattice([[r] for r in realizations], [[1.0]] * len(realizations))


def sample_path(lattice: ScenarioLattice, rng: np.random.Generator) -> SamplePath:
    """Draw one path, each stage independently with its atom probabilities."""
    idx = []
    for t in range(2, lattice.stage_count + 1):
        cum = lattice._cum[t - 1]
        j = int(np.searchsorted(cum, rng.random(), side="right"))
        idx.append(min(j, lattice.atoms(t) - 1))
    return SamplePath(tuple(idx))


def enumerate_leaf_scenarios(
    lattice: ScenarioLattice, max_paths: int = 10_000
) -> list[tuple[SamplePath, float]]:
    """All leaf-to-root paths with their probabilities (for the oracle)."""
    n_paths = lattice.leaf_count()
    if n_paths > max_paths:
        raise TreeTooLarge(f"{n_paths} paths exceed the budget of {max_paths}")
    out: list[tuple[SamplePath, float]] = []

    def rec(t: int, prefix: tuple[int, ...], prob: float) -> None:
        if t > lattice.stage_count:
            out.append((SamplePath(prefix), prob))
            return
        for j in range(lattice.atoms(t)):
            rec(t + 1, prefix + (j,), prob * lattice.probabilities[t - 1][j])

    rec(2, (), 1.0)
    return out


def lattice_to_dict(lattice: ScenarioLattice) -> dict:
    return {
        "T": lattice.stage_count,
        "stages": [
            {
                "probabilities": list(lattice.probabilities[t]),
                "realizations": [dict(r) for r in lattice.realizations[t]],
            }
            for t in range(lattice.stage_count)
        ],
    }


def lattice_from_dict(doc: Mapping) -> ScenarioLattice:
    stages = doc["stages"]
    if len(stages) != doc["T"]:
        raise ValueError("stage list length does not match T")
    return build_lattice(
        [s["realizations"] for s in stages],
        [s["probabilities"] for s in stages],
    )


def path_probability(lattice: ScenarioLattice, path: SamplePath) -> float:
    p = 1.0
    for t in range(2, lattice.stage_count + 1):
        p *= lattice.probabilities[t - 1][path.index_at(t)]
    return p
