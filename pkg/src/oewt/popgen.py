"""Synthetic finite population used by the simulation study."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Population
from .errors import ValidationError

BETA = np.array([1.0, 1.0, 1.0, 1.0])
OUTCOME_INTERCEPT = 2.0


class DegeneratePopulationError(ValidationError):
    pass


@dataclass(frozen=True)
class PopulationSpec:
    N: int = 200_000
    rho: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if int(self.N) < 2:
            raise ValidationError("population size must be at least 2")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError("rho must lie in (0, 1)")


def calibrate_sigma(xb, rho: float) -> float:
    """Noise scale giving corr(y, xb) = rho for unit-variance errors.

    sigma = sd(xb) * sqrt(1/rho^2 - 1); ``rho == 1`` gives zero noise.
    """
    xb = np.asarray(xb, dtype=np.float64)
    if not 0.0 < rho <= 1.0:
        raise ValidationError("rho must lie in (0, 1]")
    sd = float(np.std(xb))
    if not sd > 0.0:
        raise DegeneratePopulationError("linear predictor has zero variance")
    return sd * float(np.sqrt(1.0 / rho**2 - 1.0))


def generate_covariates(N: int, rng: np.random.Generator) -> np.ndarray:
    """Draw the four correlated covariates (N x 4, no intercept)."""
    z1 = rng.binomial(1, 0.5, size=N).astype(np.float64)
    z2 = rng.uniform(0.0, 2.0, size=N)
    z3 = rng.exponential(1.0, size=N)
    z4 = rng.chisquare(4, size=N)
    x1 = z1
    x2 = z2 + 0.3 * x1
    x3 = z3 + 0.2 * (x1 + x2)
    x4 = z4 + 0.1 * (x1 + x2 + x3)
    return np.column_stack([x1, x2, x3, x4])


def generate_population(spec: PopulationSpec, rho: float | None = None) -> Population:
    """Generate the population for ``spec``.

    Covariates and standardized errors depend only on ``(N, seed)``, so
    populations differing only in ``rho`` share x and epsilon. ``rho``
    overrides ``spec.rho`` and may be 1 (noiseless outcome).
    """
    rho = spec.rho if rho is None else rho
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    Z = generate_covariates(int(spec.N), rng)
    eps = rng.standard_normal(int(spec.N))
    xb = Z @ BETA
    sigma = calibrate_sigma(xb, rho)
    y = OUTCOME_INTERCEPT + xb + sigma * eps
    X = np.column_stack([np.ones(int(spec.N)), Z])
    return Population(X=X, y=y)
