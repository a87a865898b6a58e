"""Polyhedral lower approximations of cost-to-go functions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFiniteCut


@dataclass(frozen=True)
class Cut:
    """Affine minorant a + slope.x; trial point and iteration kept for diagnostics."""

    stage: int
    intercept: float
    slope: np.ndarray
    x_trial: np.ndarray
    iteration: int


@dataclass
class CutPool:
    """Max of a finite constant lower bound and all recorded cuts.

    Appends are serialized per pool; a solve snapshots the pool contents
    at assembly time, so readers between appends are safe.
    """

    stage: int
    lower_bound: float
    state_dim: int
    cuts: list[Cut] = field(default_factory=list)

    def __post_init__(self):
        if not math.isfinite(self.lower_bound):
            raise NonFiniteCut(f"pool {self.stage}: lower bound must be finite")

    def __len__(self) -> int:
        return len(self.cuts)

    def add_cut(self, theta: float, beta, x_trial, iteration: int) -> "CutPool":
        beta = np.asarray(beta, dtype=float)
        x_trial = np.asarray(x_trial, dtype=float)
        if beta.shape != (self.state_dim,) or x_trial.shape != (self.state_dim,):
            raise DimensionMismatch(
                f"pool {self.stage}: cut dimension {beta.shape} != ({self.state_dim},)"
            )
        if not (math.isfinite(theta) and np.all(np.isfinite(beta))):
            raise NonFiniteCut(f"pool {self.stage}: non-finite cut data")
        intercept = float(theta - beta @ x_trial)
        self.cuts.append(Cut(self.stage, intercept, beta, x_trial, iteration))
        return self

    def evaluate(self, x_state) -> float:
        x = np.asarray(x_state, dtype=float)
        best = self.lower_bound
        for c in self.cuts:
            best = max(best, c.intercept + float(c.slope @ x))
        return best

    def intercepts(self) -> np.ndarray:
        return np.array([c.intercept for c in self.cuts], dtype=float)

    def slopes(self) -> np.ndarray:
        if not self.cuts:
            return np.empty((0, self.state_dim))
        return np.stack([c.slope for c in self.cuts])


def write_cuts_csv(pool: CutPool, path) -> None:
    """One row per cut: iteration, intercept, slope_1..n, trial_1..n."""
    n = pool.state_dim
    header = (
        ["iteration", "intercept"]
        + [f"slope_{i + 1}" for i in range(n)]
        + [f"trial_{i + 1}" for i in range(n)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for c in pool.cuts:
            w.writerow(
                [c.iteration, repr(c.intercept)]
                + [repr(float(v)) for v in c.slope]
                + [repr(float(v)) for v in c.x_trial]
            )
