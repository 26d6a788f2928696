"""Sampling designs: Poisson selection of the big sample, randomized systematic PPS for the reference sample."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .datamodel import BigSample, Population, ReferenceSample
from .errors import (
    CertaintyUnitError,
    DesignError,
    EmptySampleError,
    RangeError,
    ValidationError,
)

PAPER_SLOPES = (0.1, 0.2, 0.3, 0.4)


@dataclass(frozen=True)
class BigDesignSpec:
    target_NB: int
    slopes: tuple = PAPER_SLOPES


@dataclass(frozen=True)
class PPSDesignSpec:
    """Reference design: size measure ``c + X[:, size_column]`` with ``c`` set by ``ratio``.

    ``ratio=None`` uses the column as-is.
    """

    n_A: int = 5000
    size_column: int = 3
    ratio: Optional[float] = 10.0

    def __post_init__(self):
        if self.n_A < 1:
            raise ValidationError("n_A must be positive")
        if self.ratio is not None and not self.ratio > 1.0:
            raise ValidationError("ratio target must exceed 1")


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def calibrate_intercept(population: Population, slopes, target_NB: float, tol: float = 0.5) -> float:
    """Intercept theta0 with sum(expit(theta0 + slopes'x)) = target_NB, by bisection."""
    N = population.N
    if not 0.0 < target_NB < N:
        raise RangeError(f"target N_B must lie strictly between 0 and N={N}")
    slopes = np.asarray(slopes, dtype=np.float64)
    if slopes.shape != (population.p - 1,):
        raise ValidationError("need one slope per non-intercept column")
    eta = population.X[:, 1:] @ slopes

    def excess(t0):
        return float(np.sum(expit(t0 + eta))) - target_NB

    lo, hi = -1.0, 1.0
    while excess(lo) > 0:
        lo *= 2.0
        if lo < -1e4:
            raise RangeError("could not bracket intercept")
    while excess(hi) < 0:
        hi *= 2.0
        if hi > 1e4:
            raise RangeError("could not bracket intercept")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = excess(mid)
        if abs(f) <= tol:
            return mid
        if f < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def true_propensities(population: Population, theta0: float, slopes) -> np.ndarray:
    return expit(theta0 + population.X[:, 1:] @ np.asarray(slopes, dtype=np.float64))


def with_true_propensities(population: Population, spec: BigDesignSpec) -> tuple[Population, float]:
    theta0 = calibrate_intercept(population, spec.slopes, spec.target_NB)
    pi = true_propensities(population, theta0, spec.slopes)
    return dataclasses.replace(population, pi_b_true=pi), theta0


def draw_poisson(population: Population, pi, seed=None, design_weights=None) -> BigSample:
    """Poisson sample: unit i enters independently with probability pi[i].

    ``design_weights`` (length N) attaches the reference-design weight of each
    selected unit to the result.
    """
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (population.N,):
        raise ValidationError("pi must have one entry per population unit")
    if np.any(pi < 0) or np.any(pi > 1):
        raise ValidationError("inclusion probabilities must lie in [0, 1]")
    rng = _as_rng(seed)
    ids = np.flatnonzero(rng.random(population.N) < pi)
    if ids.size == 0:
        raise EmptySampleError("Poisson draw selected no units")
    dA = None if design_weights is None else np.asarray(design_weights)[ids]
    return BigSample(ids=ids, X=population.X[ids], y=population.y[ids], dA=dA)


def solve_ratio_constant(x, ratio: float) -> float:
    """Shift c with (c + max x) / (c + min x) = ratio."""
    x = np.asarray(x, dtype=np.float64)
    if not ratio > 1.0:
        raise DesignError("ratio must exceed 1")
    lo, hi = float(np.min(x)), float(np.max(x))
    c = (hi - ratio * lo) / (ratio - 1.0)
    if not c + lo > 0.0:
        raise DesignError("size measure would be nonpositive; ratio unattainable")
    return c


def pps_size_measure(population: Population, spec: PPSDesignSpec) -> np.ndarray:
    x = population.X[:, spec.size_column]
    if spec.ratio is None:
        z = np.array(x, dtype=np.float64)
    else:
        z = solve_ratio_constant(x, spec.ratio) + x
    if np.any(z <= 0):
        raise DesignError("size measure must be positive")
    return z


def pps_inclusion_probabilities(sizes, n: int) -> np.ndarray:
    """First-order inclusion probabilities n * z / sum(z); errors if any exceeds 1."""
    z = np.asarray(sizes, dtype=np.float64)
    if not 1 <= n <= z.size:
        raise DesignError("sample size must lie in [1, N]")
    pi = n * z / np.sum(z)
    if np.max(pi) > 1.0 + 1e-12:
        raise CertaintyUnitError(
            f"{int(np.sum(pi > 1.0))} unit(s) have n*z/sum(z) > 1; systematic PPS needs no certainty units"
        )
    return np.minimum(pi, 1.0)


def systematic_pps(sizes, n: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Randomized systematic PPS selection.

    Units are randomly permuted, their inclusion probabilities cumulated, and
    the points u, u+1, ..., u+n-1 (u ~ U(0,1)) pick the units whose intervals
    contain them. Returns sorted selected indices and their probabilities.
    """
    rng = _as_rng(seed)
    pi = pps_inclusion_probabilities(sizes, n)
    order = rng.permutation(pi.size)
    cum = np.cumsum(pi[order])
    cum *= n / cum[-1]
    points = rng.random() + np.arange(n)
    pos = np.searchsorted(cum, points, side="right")
    np.minimum(pos, pi.size - 1, out=pos)
    chosen = np.sort(order[pos])
    if np.unique(chosen).size != n:  # only reachable through rounding at pi == 1
        raise DesignError("systematic selection produced a duplicate unit")
    return chosen, pi[chosen]


def draw_pps_systematic(population: Population, spec: PPSDesignSpec, seed=None) -> ReferenceSample:
    """Draw the reference sample; overlap flags are left unset (all false, ``overlap_known=False``)."""
    z = pps_size_measure(population, spec)
    ids, pi = systematic_pps(z, spec.n_A, seed)
    return ReferenceSample(
        ids=ids,
        d=1.0 / pi,
        delta=np.zeros(ids.size, dtype=bool),
        X=population.X[ids],
        overlap_known=False,
    )
