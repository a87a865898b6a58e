"""Expectation and mean-AV@R aggregation of child values and subgradients.

Minimization convention throughout: larger values are worse. AV@R_alpha
is the expectation over the worst alpha-tail; its discrete subgradient
weights put mass p_j/alpha on the worst atoms, splitting the boundary
atom fractionally. Ties among equal values are broken by input order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidDistribution, ParameterOutOfRange

_DIST_TOL = 1e-9


@dataclass(frozen=True)
class RiskSpec:
    """Aggregator: plain expectation or (1-lam)*E + lam*AV@R_alpha."""

    kind: str = "expectation"
    lam: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("expectation", "mean_avar"):
            raise ParameterOutOfRange(f"unknown risk kind {self.kind!r}")
        if self.kind == "mean_avar":
            if not 0.0 <= self.lam <= 1.0:
                raise ParameterOutOfRange(f"lambda must be in [0,1], got {self.lam}")
            if not 0.0 < self.alpha <= 1.0:
                raise ParameterOutOfRange(f"alpha must be in (0,1], got {self.alpha}")

    @property
    def is_expectation(self) -> bool:
        return self.kind == "expectation" or self.lam == 0.0 or self.alpha == 1.0


def expectation() -> RiskSpec:
    return RiskSpec("expectation")


def mean_avar(lam: float, alpha: float) -> RiskSpec:
    return RiskSpec("mean_avar", lam=lam, alpha=alpha)


def _check_distribution(values: np.ndarray, probs: np.ndarray) -> None:
    if values.shape != probs.shape or values.ndim != 1:
        raise InvalidDistribution("values and probs must be 1-d and equally long")
    if values.size == 0:
        raise InvalidDistribution("empty distribution")
    if np.any(probs < 0):
        raise InvalidDistribution("negative probability")
    if abs(float(probs.sum()) - 1.0) > _DIST_TOL:
        raise InvalidDistribution(f"probabilities sum to {float(probs.sum())!r}")


def avar_weights(values: np.ndarray, probs: np.ndarray, alpha: float) -> np.ndarray:
    """Subgradient weights of AV@R_alpha at a discrete distribution.

    Mass p_j/alpha on the worst (largest) atoms until cumulative mass
    alpha is covered; the atom on the boundary gets the leftover share.
    """
    if alpha == 1.0:
        return probs.copy()
    order = np.argsort(-values, kind="stable")
    w = np.zeros_like(probs)
    remaining = alpha
    for j in order:
        share = min(float(probs[j]), remaining)
        w[j] = share / alpha
        remaining -= share
        if remaining <= 0.0:
            break
    return w


def aggregate(
    values: Sequence[float], probs: Sequence[float], spec: RiskSpec
) -> tuple[float, np.ndarray]:
    """Aggregate child values into (rho_value, weights).

    weights form a distribution in the subdifferential of the risk
    measure at `values`, so rho_value == weights . values and the same
    weights combine child subgradients into a valid aggregated slope.
    """
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    _check_distribution(v, p)
    if spec.kind == "expectation" or spec.lam == 0.0:
        w = p.copy()
    elif spec.alpha == 1.0:
        w = p.copy()
    else:
        w = (1.0 - spec.lam) * p + spec.lam * avar_weights(v, p, spec.alpha)
    return float(w @ v), w


def avar_value_oracle(
    values: Sequence[float], probs: Sequence[float], alpha: float, grid_points: int = 10_000
) -> float:
    """Independent AV@R oracle: dense grid search on the variational form.

    min over u of  u + (1/alpha) * E[(Z - u)_+], with the grid holding
    every atom plus `grid_points` uniform points between min and max.
    """
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    _check_distribution(v, p)
    if not 0.0 < alpha <= 1.0:
        raise ParameterOutOfRange(f"alpha must be in (0,1], got {alpha}")
    lo, hi = float(v.min()), float(v.max())
    grid = np.unique(np.concatenate([v, np.linspace(lo, hi, grid_points)]))
    excess = np.maximum(v[None, :] - grid[:, None], 0.0)
    obj = grid + (excess @ p) / alpha
    return float(obj.min())


def risk_value_oracle(
    values: Sequence[float], probs: Sequence[float], spec: RiskSpec
) -> float:
    """(1-lam)*mean + lam*AV@R via the grid oracle (test reference)."""
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    if spec.kind == "expectation":
        return float(p @ v)
    return (1.0 - spec.lam) * float(p @ v) + spec.lam * avar_value_oracle(
        values, probs, spec.alpha
    )
